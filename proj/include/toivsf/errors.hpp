#pragma once

#include <stdexcept>
#include <string>

namespace toivsf {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid hyperparameters, malformed configs, bad flags.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Non-finite values produced by a forward op or loss.
class NumericError : public Error {
public:
    using Error::Error;
};

// backward() invoked on a graph whose tape was already consumed.
class StaleTapeError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t col)
        : Error(what + " (row " + std::to_string(row) + ", column " + std::to_string(col) + ")"),
          row_(row), col_(col) {}

    std::size_t row() const { return row_; }
    std::size_t col() const { return col_; }

private:
    std::size_t row_;
    std::size_t col_;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Checkpoint version or configuration mismatch.
class CheckpointError : public Error {
public:
    using Error::Error;
};

// Metric undefined for the given inputs, e.g. a non-positive reference error.
class DomainError : public Error {
public:
    using Error::Error;
};

}  // namespace toivsf
