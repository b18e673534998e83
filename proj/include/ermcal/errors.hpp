#pragma once

#include <stdexcept>
#include <string>

namespace ermcal {

// Exit-code contract used by the CLI: 1 validation, 2 I/O, 3 numerical.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

class InputError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

// Raised by the KLR optimizer when no step size yields descent.
class OptimizerError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace ermcal
