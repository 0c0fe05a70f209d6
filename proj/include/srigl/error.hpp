// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace srigl {

enum class Errc {
    NonUniformFanIn,
    IndexOutOfRange,
    DuplicateIndex,
    DimensionMismatch,
    DomainError,
    InfeasibleSparsity,
    InsufficientInactive,
    RegrowExhausted,
    DivergenceDetected,
    ConfigError,
    FormatError,
    IoError,
};

inline const char* to_string(Errc code) {
    switch (code) {
        case Errc::NonUniformFanIn: return "NonUniformFanIn";
        case Errc::IndexOutOfRange: return "IndexOutOfRange";
        case Errc::DuplicateIndex: return "DuplicateIndex";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::DomainError: return "DomainError";
        case Errc::InfeasibleSparsity: return "InfeasibleSparsity";
        case Errc::InsufficientInactive: return "InsufficientInactive";
        case Errc::RegrowExhausted: return "RegrowExhausted";
        case Errc::DivergenceDetected: return "DivergenceDetected";
        case Errc::ConfigError: return "ConfigError";
        case Errc::FormatError: return "FormatError";
        case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace srigl
