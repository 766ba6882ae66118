#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace patuntrack {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated an operation precondition.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Input text could not be parsed. `position` is a byte offset or a 1-based
/// line number depending on the parser; `what()` says which.
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t position)
        : Error(message), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// A VTP graph violates a structural invariant (dangling edge, duplicate id,
/// self-loop, cycle).
class StructureError : public Error {
public:
    using Error::Error;
};

/// An LLM reply could not be decoded. Keeps the raw reply for retry loops.
class DecodeError : public Error {
public:
    DecodeError(const std::string& message, std::string raw_reply)
        : Error(message), raw_reply_(std::move(raw_reply)) {}

    const std::string& raw_reply() const noexcept { return raw_reply_; }

private:
    std::string raw_reply_;
};

/// Transport failure after all retries, or a backend misconfiguration.
class GatewayError : public Error {
public:
    using Error::Error;
};

/// The scripted backend ran out of replies or saw an unknown tag.
class ScriptError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

/// A bounded loop step threw; carries the number of invocations so far.
class LoopError : public Error {
public:
    LoopError(const std::string& message, int iterations)
        : Error(message), iterations_(iterations) {}

    int iterations() const noexcept { return iterations_; }

private:
    int iterations_;
};

class OptimizerError : public Error {
public:
    using Error::Error;
};

}  // namespace patuntrack
