#pragma once

#include <stdexcept>
#include <string>

namespace anchorstream {

// Invalid dimensions, out-of-range hyperparameters, missing prerequisites.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation left the numerical domain (non-SPD matrix, non-finite loss).
// pivot() is the index of the first non-positive pivot when the failure came
// from a Cholesky factorization, -1 otherwise.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, int pivot = -1)
      : std::runtime_error(what), pivot_(pivot) {}
  int pivot() const noexcept { return pivot_; }

 private:
  int pivot_;
};

// Malformed posterior input (rows must lie on the probability simplex).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input. line() is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what, long line = 0)
      : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

// Source pretraining diverged. epoch() is the epoch where the loss left the
// finite domain.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what, int epoch = -1)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Anchor construction failed (empty class, zero-norm classifier row).
class AnchorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric computation over an unusable prediction log or empty stream.
class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be read/written or has a malformed binary layout.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace anchorstream
