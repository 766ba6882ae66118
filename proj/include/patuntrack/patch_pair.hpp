#pragma once

#include <string>

#include "patuntrack/vtp.hpp"

namespace patuntrack {

/// One generated <insecure code, patch> candidate.
struct PatchPair {
    int rank = 1;
    std::string insecure_code;
    std::string patch;
    VulType vul_type;
    std::string patch_type = std::string(kUnknownPatch);

    bool operator==(const PatchPair&) const = default;
};

void to_json(nlohmann::json& j, const PatchPair& p);
PatchPair patch_pair_from_json(const nlohmann::json& j);

}  // namespace patuntrack
