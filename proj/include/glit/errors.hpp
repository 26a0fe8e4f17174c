#pragma once

#include <stdexcept>
#include <string>

namespace glit {

// Bad hyperparameters or architecture choices (even kernel, odd GLU width...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// API misuse, e.g. backward() on a non-scalar.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// No genotype satisfying the FLOPs budget could be produced.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wrong magic, unknown version, or inconsistent header.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File ends early or a tensor record is damaged.
class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace glit
