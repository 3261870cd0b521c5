#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace iadccn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid hyper-parameters or geometry (odd pooling extent, bad stride...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data violates its contract (point out of bounds, bad image...).
class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed file. `offset()` is a byte offset, `line()` is 1-based or 0 if unknown.
class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t offset, std::size_t line = 0)
        : DataError(what), offset_(offset), line_(line) {}
    std::size_t offset() const noexcept { return offset_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t offset_;
    std::size_t line_;
};

/// Misuse of the autograd graph (non-scalar loss, repeated backward...).
class GraphError : public Error {
public:
    using Error::Error;
};

/// Caller broke a precondition that is not about shapes or data.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Named-parameter set does not match what a model config implies.
class InventoryError : public Error {
public:
    using Error::Error;
};

}  // namespace iadccn
