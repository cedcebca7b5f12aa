#pragma once

#include <stdexcept>
#include <string>

namespace mglow {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A point fails its manifold invariants (norm, positivity, symmetry, definiteness).
class InvalidPointError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Chart coordinates at or beyond the injectivity radius, or a point on the cut locus.
class ChartDomainError : public DomainError {
 public:
  explicit ChartDomainError(const std::string& what, int layer = -1)
      : DomainError(layer < 0 ? what : what + " (layer " + std::to_string(layer) + ")"),
        layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Zero-variance batch, singular covariance or Jacobian, too few group members.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or magnitudes past the numerical floor.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class RejectionExhaustedError : public Error {
 public:
  using Error::Error;
};

class StaleTapeError : public Error {
 public:
  using Error::Error;
};

// Malformed files: magic, version, truncation, checksum.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace mglow
