#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace deliberec {

enum class ErrorKind {
    validation,   ///< bad argument or precondition
    io,           ///< unreadable/unwritable file
    parse,        ///< model output or record could not be parsed
    cold_start,   ///< user or item unknown to the training split
    capability,   ///< backend lacks a required feature (log-probabilities)
    transport,    ///< network failure after all retries
    protocol,     ///< malformed endpoint reply
    script,       ///< mock script exhausted or unmatched
    leakage,      ///< supervision signal would reach a test-time or exported prompt
    numeric,      ///< non-finite values, divergence
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
    case ErrorKind::cold_start: return "cold_start";
    case ErrorKind::capability: return "capability";
    case ErrorKind::transport: return "transport";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::script: return "script";
    case ErrorKind::leakage: return "leakage";
    case ErrorKind::numeric: return "numeric";
    }
    return "unknown";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool condition, const std::string& what) {
    if (!condition) fail(ErrorKind::validation, what);
}

} // namespace deliberec
