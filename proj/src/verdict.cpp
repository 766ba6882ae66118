#include "patuntrack/verdict.hpp"

#include "patuntrack/error.hpp"

namespace patuntrack {

CandidateVerdict::CandidateVerdict(std::string ir_id, int rank, bool triggered, bool fixed)
    : ir_id_(std::move(ir_id)), rank_(rank), triggered_(triggered), fixed_(fixed) {
    if (rank_ < 1) throw UsageError("verdict rank must be >= 1");
    if (fixed_ && !triggered_) {
        throw UsageError("verdict for " + ir_id_ + " rank " + std::to_string(rank_) +
                         " is fixed without being triggered");
    }
}

void to_json(nlohmann::json& j, const CandidateVerdict& v) {
    j = nlohmann::json{{"ir_id", v.ir_id()}, {"rank", v.rank()}, {"triggered", v.triggered()}, {"fixed", v.fixed()}};
}

CandidateVerdict verdict_from_json(const nlohmann::json& j, const std::string& default_ir_id) {
    return CandidateVerdict(j.value("ir_id", default_ir_id), j.at("rank").get<int>(), j.value("triggered", false),
                            j.value("fixed", false));
}

}  // namespace patuntrack
