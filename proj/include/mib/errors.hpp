#pragma once

#include <stdexcept>
#include <string>

namespace mib {

// Shape mismatch between operands (wrong dimensions, incompatible matmul, ...).
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A caller broke an operation's contract (non-scalar loss, empty batch, ...).
class ContractError : public std::invalid_argument {
public:
    explicit ContractError(const std::string& msg) : std::invalid_argument(msg) {}
};

// NaN or Inf showed up where only finite values are allowed.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File could not be read or written; the message names the path.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mib
