#pragma once

#include <stdexcept>
#include <string>

namespace cf {

// Shape or extent mismatch. Messages name both offending shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input outside an operation's mathematical domain (log/sqrt of x <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// softmax over a row with every position masked.
class DegenerateRowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an operation contract (non-scalar loss, bad flags, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Bad configuration or input data. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system failures. Maps to CLI exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced NaN/Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cf
