#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace uaed {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration or precondition violation.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input file or byte stream.
class FormatError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public Error {
public:
    ChecksumError(std::string file, const std::string& detail)
        : Error("checksum mismatch for " + file + ": " + detail), file_(std::move(file)) {}

    const std::string& file() const noexcept { return file_; }

private:
    std::string file_;
};

/// A loss or risk evaluated to a non-finite value.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, std::size_t batch_index)
        : Error(what + " (batch index " + std::to_string(batch_index) + ")"), batch_index_(batch_index) {}

    std::size_t batch_index() const noexcept { return batch_index_; }

private:
    std::size_t batch_index_;
};

class PolicyNumericalError : public Error {
public:
    using Error::Error;
};

class PolicyConfigError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

} // namespace uaed
