#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace patuntrack {

/// A non-fatal condition an operation wants the caller to see: a dropped
/// screenshot, a fallback taken, a no-op mutation.
struct Diagnostic {
    std::string code;
    std::string message;

    bool operator==(const Diagnostic&) const = default;
};

using Diagnostics = std::vector<Diagnostic>;

inline void to_json(nlohmann::json& j, const Diagnostic& d) {
    j = nlohmann::json{{"code", d.code}, {"message", d.message}};
}

}  // namespace patuntrack
