#pragma once

#include <stdexcept>
#include <string>

namespace expertsim {

// Exit-code mapping: ValidationError -> 1, RuntimeError -> 2, TransportError -> 3.

class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public ValidationError {
public:
    ParseError(const std::string& msg, std::size_t line)
        : ValidationError(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class RuntimeError : public std::runtime_error {
public:
    explicit RuntimeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Budget or isolation contracts broken by calling code.
class ContractViolation : public RuntimeError {
public:
    explicit ContractViolation(const std::string& msg) : RuntimeError(msg) {}
};

// External generator endpoint unreachable, timed out, or returned garbage.
class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace expertsim
