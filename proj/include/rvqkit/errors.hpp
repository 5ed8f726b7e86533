#pragma once

#include <stdexcept>
#include <string>

namespace rvqkit {

// Caller broke a documented precondition (shape mismatch, index out of range).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input is well-formed but mathematically unusable, e.g. a zero-norm vector
// under the cosine metric.
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or unreadable data files, or data that does not fit the model.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training or decoding produced a non-finite value.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The AR stage emitted end-of-sequence before any code.
class EmptyGeneration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace rvqkit
