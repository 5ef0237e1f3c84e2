#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace perlearn {

// Error categories double as machine-readable tokens in CLI output.
enum class ErrorCategory {
    config,
    io,
    schema,
    dimension,
    numeric,
    stage,
    missing_artifact,
};

inline const char* to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::config: return "config_error";
        case ErrorCategory::io: return "io_error";
        case ErrorCategory::schema: return "schema_error";
        case ErrorCategory::dimension: return "dimension_error";
        case ErrorCategory::numeric: return "numeric_error";
        case ErrorCategory::stage: return "stage_error";
        case ErrorCategory::missing_artifact: return "missing_artifact";
    }
    return "unknown_error";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), category(cat) {}
    ErrorCategory category;
};

inline void require(bool cond, ErrorCategory cat, const std::string& msg) {
    if (!cond) throw Error(cat, msg);
}

inline void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v))
        throw Error(ErrorCategory::numeric, what + " is not finite");
}

inline void require_all_finite(const std::vector<double>& v, const std::string& what) {
    for (double x : v)
        if (!std::isfinite(x))
            throw Error(ErrorCategory::numeric, what + " contains a non-finite value");
}

}  // namespace perlearn
