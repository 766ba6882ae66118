#pragma once

#include <string>

#include "json.hpp"

namespace patuntrack {

/// Whether one ranked candidate triggered and fixed the vulnerability.
/// fixed implies triggered; the constructor rejects anything else.
class CandidateVerdict {
public:
    CandidateVerdict(std::string ir_id, int rank, bool triggered, bool fixed);

    const std::string& ir_id() const { return ir_id_; }
    int rank() const { return rank_; }
    bool triggered() const { return triggered_; }
    bool fixed() const { return fixed_; }

    bool operator==(const CandidateVerdict&) const = default;

private:
    std::string ir_id_;
    int rank_;
    bool triggered_;
    bool fixed_;
};

void to_json(nlohmann::json& j, const CandidateVerdict& v);
CandidateVerdict verdict_from_json(const nlohmann::json& j, const std::string& default_ir_id);

}  // namespace patuntrack
