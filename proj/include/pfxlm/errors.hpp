#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pfxlm {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand extents do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A softmax row where every entry is -inf.
class DegenerateRowError : public Error {
public:
    using Error::Error;
};

/// Cross entropy with no unmasked position.
class EmptyLossError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf produced by a forward operation.
class NumericError : public Error {
public:
    using Error::Error;
};

/// API misuse (backward on a non-scalar, wrong section set, ...).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Unknown token id or inconsistent vocabulary state.
class VocabularyError : public Error {
public:
    using Error::Error;
};

/// Sequence longer than the model or generation budget allows.
class LengthError : public Error {
public:
    using Error::Error;
};

class EmptySourceError : public Error {
public:
    using Error::Error;
};

class ShortTargetError : public Error {
public:
    using Error::Error;
};

/// Missing tensor, bad shape or truncated payload in a weights file.
class ImportError : public Error {
public:
    using Error::Error;
};

/// Malformed text input. Carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace pfxlm
