#pragma once

#include <stdexcept>
#include <string>

namespace lobmm {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An event is inconsistent with the book it is applied to.
class ViolationError : public Error {
public:
    using Error::Error;
};

// An operation was called in a book/engine state that does not allow it.
class StateError : public Error {
public:
    using Error::Error;
};

// Malformed input file or stream. Carries the offending line when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Invalid or incomplete configuration (model file, tables, CLI parameters).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Problem construction failed (non-stochastic kernel row, missing table entry, ...).
class ConstructionError : public Error {
public:
    using Error::Error;
};

class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

}  // namespace lobmm
