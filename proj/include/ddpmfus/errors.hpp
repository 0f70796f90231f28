#pragma once

#include <stdexcept>
#include <string>

namespace ddpmfus {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or cube shapes that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A timestep or element index outside its range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Denoiser weights that do not match the configured architecture.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed input files.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Bad magic bytes or unsupported format version.
class FormatError : public LoadError {
 public:
  using LoadError::LoadError;
};

/// Divergence or I/O failure during training.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace ddpmfus
