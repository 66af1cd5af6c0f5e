#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cellpca {

/// Bad inputs: dimensions, configuration, unparsable files. CLI exit code 2.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical breakdown: degenerate scatter, singular systems, guards. CLI exit code 3.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem failures. CLI exit code 4.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : ValidationError {
    using ValidationError::ValidationError;
};

struct EmptyRow : ValidationError {
    using ValidationError::ValidationError;
};

struct TooManyMissing : ValidationError {
    using ValidationError::ValidationError;
};

struct FractionTooLarge : ValidationError {
    using ValidationError::ValidationError;
};

struct RankMismatch : ValidationError {
    using ValidationError::ValidationError;
};

struct UnsupportedP : ValidationError {
    using ValidationError::ValidationError;
};

struct MonteCarloBudgetTooSmall : ValidationError {
    using ValidationError::ValidationError;
};

struct EmptyCleanSet : ValidationError {
    using ValidationError::ValidationError;
};

struct RetriesExhausted : ValidationError {
    using ValidationError::ValidationError;
};

/// M-scale equation has no positive root (too many exact zeros).
struct AllZeroScale : NumericalError {
    using NumericalError::NumericalError;
};

struct DegenerateColumn : NumericalError {
    using NumericalError::NumericalError;
};

struct RankDeficient : NumericalError {
    using NumericalError::NumericalError;
};

struct DegenerateScatter : NumericalError {
    using NumericalError::NumericalError;
};

struct ZeroEigenvalue : NumericalError {
    using NumericalError::NumericalError;
};

struct SingularB : NumericalError {
    using NumericalError::NumericalError;
};

struct CsvParseError : ValidationError {
    CsvParseError(std::size_t row, std::size_t col, const std::string& token)
        : ValidationError("cannot parse token \"" + token + "\" at row " + std::to_string(row) +
                          ", column " + std::to_string(col)),
          row(row), col(col), token(token) {}
    std::size_t row, col;
    std::string token;
};

struct RaggedRows : ValidationError {
    using ValidationError::ValidationError;
};

struct EmptyFile : ValidationError {
    using ValidationError::ValidationError;
};

}  // namespace cellpca
