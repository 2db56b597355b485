#pragma once

#include <stdexcept>
#include <string>

namespace segdt {

// Bad shapes, malformed inputs, mismatched datasets. CLI maps these to exit 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public DataError {
public:
    explicit ShapeError(const std::string& msg) : DataError(msg) {}
};

// Non-finite values or diverging computations. CLI maps these to exit 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class CheckpointError : public std::runtime_error {
public:
    enum class Kind {
        bad_magic,
        unsupported_version,
        truncated,
        shape_mismatch,
        name_mismatch,
        trailing_data,
        io
    };

    CheckpointError(Kind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

} // namespace segdt
