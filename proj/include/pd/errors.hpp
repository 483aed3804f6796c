#pragma once

#include <stdexcept>
#include <string>

namespace pd {

/// Runtime failure in training, pruning, sampling or I/O. CLI exit code 2.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad flags, bad config keys, invalid value ranges. CLI exit code 1.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

/// Remote proxy endpoint unreachable after retries.
class ProxyUnavailable : public Error {
public:
    explicit ProxyUnavailable(const std::string& msg) : Error(msg) {}
};

/// Proxy produced output that could not be turned into a valid scheme.
/// Carries the offending text for the audit trail.
class ProxyParseError : public Error {
public:
    ProxyParseError(const std::string& msg, std::string offending)
        : Error(msg), offending_text(std::move(offending)) {}
    std::string offending_text;
};

} // namespace pd
