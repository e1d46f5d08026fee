#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace textveil {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad arguments or malformed inputs (empty corpus, out-of-range budget, ...).
struct InvalidInputError : Error {
    using Error::Error;
};

// Configuration rejected before execution (CLI/experiment configs).
struct ConfigError : Error {
    using Error::Error;
};

// Character not covered by the vocabulary; carries codepoint and offset.
struct UnknownCharError : Error {
    UnknownCharError(const std::string& msg, char32_t cp, size_t off)
        : Error(msg), codepoint(cp), offset(off) {}
    char32_t codepoint;
    size_t offset;
};

struct InvalidIdError : Error {
    using Error::Error;
};

struct VocabMismatchError : Error {
    using Error::Error;
};

struct HtmlParseError : Error {
    HtmlParseError(const std::string& msg, size_t off) : Error(msg), offset(off) {}
    size_t offset;
};

struct InsufficientSampleError : Error {
    using Error::Error;
};

struct DegenerateDistributionError : Error {
    using Error::Error;
};

// Remote scorer failures, one class per failure mode.
struct RemoteConnectError : Error {
    using Error::Error;
};
struct RemoteTimeoutError : Error {
    using Error::Error;
};
struct RemoteProtocolError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace textveil
