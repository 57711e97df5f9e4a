#ifndef KT_ERROR_HPP
#define KT_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An id outside its valid range. Carries the offending id.
class IndexError : public Error {
public:
    IndexError(const std::string& what, long long id) : Error(what), id_(id) {}
    long long id() const noexcept { return id_; }

private:
    long long id_;
};

/// Malformed input file. Carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Input that parses but violates a precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Metric or statistical test undefined for the given input.
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

/// Training diverged (non-finite loss).
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace kt

#endif  // KT_ERROR_HPP
