#pragma once

#include <stdexcept>
#include <string>

namespace emo {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual const char* kind() const noexcept { return "error"; }
};

/// Bad caller input: malformed images, empty datasets, out-of-set labels.
class InputError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "input"; }
};

/// Inconsistent configuration: mismatched widths, bad ranks, unknown toggles.
class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config"; }
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numeric"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io"; }
};

/// Failure talking to an instruction generator backend.
class ClientError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "client"; }
};

}  // namespace emo
