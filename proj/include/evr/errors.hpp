#pragma once
#include <stdexcept>
#include <string>
#include <cstddef>

namespace evr {

// Base for everything we throw on purpose, so callers can catch one type.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Text/binary input that doesn't match the expected format. Carries the byte
// offset where parsing gave up.
struct ParseError : Error {
    std::size_t offset;
    ParseError(const std::string& what, std::size_t off)
        : Error(what + " (at byte " + std::to_string(off) + ")"), offset(off) {}
};

// Structurally valid input that violates a semantic constraint.
struct ValidationError : Error {
    using Error::Error;
};

// Rejection sampling exhausted its attempt budget.
struct GenerationError : Error {
    using Error::Error;
};

// Tensor shapes don't line up for the requested op.
struct ShapeError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace evr
