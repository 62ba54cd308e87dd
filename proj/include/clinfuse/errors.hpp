#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace clinfuse {

// Base of every exception thrown by the library. Invariant violations in
// data are reported as values (see ValidationReport), not exceptions.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, std::string reason)
        : Error("line " + std::to_string(line) + ": " + reason), line_(line), reason_(std::move(reason)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::size_t line_;
    std::string reason_;
};

class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& message)
        : Error("config key '" + key + "': " + message), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class TooFewPatients : public Error {
public:
    using Error::Error;
};

class EmptyGraph : public Error {
public:
    using Error::Error;
};

class EmptyCorpus : public Error {
public:
    using Error::Error;
};

class ZeroVector : public Error {
public:
    using Error::Error;
};

class QueryNotIndexed : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class LengthMismatch : public Error {
public:
    using Error::Error;
};

class NegativeTime : public Error {
public:
    using Error::Error;
};

class TooFewMinority : public Error {
public:
    using Error::Error;
};

class SingleClass : public Error {
public:
    using Error::Error;
};

class NoPositives : public Error {
public:
    using Error::Error;
};

class Diverged : public Error {
public:
    using Error::Error;
};

class BudgetExceeded : public Error {
public:
    using Error::Error;
};

class AmbiguousPrediction : public Error {
public:
    using Error::Error;
};

class MissingPrediction : public Error {
public:
    using Error::Error;
};

// LLM client failures. `context` carries the visit identity once the error
// has crossed the context-assembly boundary.
class CompletionError : public Error {
public:
    enum class Kind { timeout, rate_limited, malformed_response, unavailable };

    CompletionError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }
    bool transient() const noexcept { return kind_ != Kind::malformed_response; }
    const std::string& context() const noexcept { return context_; }
    void set_context(std::string context) { context_ = std::move(context); }

private:
    Kind kind_;
    std::string context_;
};

class Timeout : public CompletionError {
public:
    explicit Timeout(const std::string& message) : CompletionError(Kind::timeout, message) {}
};

class RateLimited : public CompletionError {
public:
    explicit RateLimited(const std::string& message) : CompletionError(Kind::rate_limited, message) {}
};

class MalformedResponse : public CompletionError {
public:
    explicit MalformedResponse(const std::string& message)
        : CompletionError(Kind::malformed_response, message) {}
};

class Unavailable : public CompletionError {
public:
    explicit Unavailable(const std::string& message) : CompletionError(Kind::unavailable, message) {}
};

// Raised by M1 inference when the client has failed for enough consecutive
// visits that continuing would only produce fallbacks.
class SystemicOutage : public Error {
public:
    using Error::Error;
};

}  // namespace clinfuse
