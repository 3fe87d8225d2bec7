#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mfx {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor/layout shape disagreement. `where` names the offending layer or
// segment when known.
class ShapeError : public Error {
public:
    ShapeError(std::string where, const std::string& what)
        : Error(where.empty() ? what : where + ": " + what), where_(std::move(where)) {}

    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
public:
    NumericError(std::string where, const std::string& what)
        : Error(where + ": " + what), where_(std::move(where)) {}

    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

// Invalid argument or precondition violation.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Malformed file contents. `offset` is the byte offset of the problem.
class FormatError : public Error {
public:
    FormatError(std::uint64_t offset, const std::string& what)
        : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

}  // namespace mfx
