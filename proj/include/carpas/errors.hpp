#pragma once

#include <stdexcept>
#include <string>

namespace carpas {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input text (settings tokens, JSON payloads, model replies).
class ParseError : public Error {
public:
    using Error::Error;
};

// A precondition or invariant was violated by the caller.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Bad configuration (unknown domain, count mismatch, missing paths).
class ConfigError : public Error {
public:
    using Error::Error;
};

// A provider call failed after retries, or violated its contract.
class ProviderError : public Error {
public:
    using Error::Error;
};

// A serialized artifact has the wrong shape (magic header, version, schema).
class FormatError : public Error {
public:
    using Error::Error;
};

// A scripted provider received a prompt no rule matches.
class ScriptedGapError : public Error {
public:
    using Error::Error;
};

} // namespace carpas
