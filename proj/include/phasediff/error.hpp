#pragma once

#include <stdexcept>
#include <string>

namespace phasediff {

/// Base class for every error raised by the library.
///
/// `kind()` is a short machine-readable tag ("shape", "range", "io", ...)
/// that the CLI copies into its JSON error object.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

struct RangeError : Error {
    explicit RangeError(const std::string& message) : Error("range", message) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& message) : Error("numeric", message) {}
};

struct DataError : Error {
    explicit DataError(const std::string& message) : Error("data", message) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& message) : Error("config", message) {}
};

struct IoError : Error {
    explicit IoError(const std::string& message) : Error("io", message) {}
};

} // namespace phasediff
