#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hyqe {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input document (CSV, JSON Lines, plan JSON, config).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line)
    {
    }

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Unknown column/relation, type mismatch, incompatible schemas.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// A backend reply that breaks the operator's wire contract.
class ContractViolation : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    using Error::Error;
};

class PlanningError : public Error {
public:
    using Error::Error;
};

class ExecutionError : public Error {
public:
    using Error::Error;
};

}  // namespace hyqe
