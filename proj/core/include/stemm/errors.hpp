#pragma once

#include <stdexcept>
#include <string>

namespace stemm {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Token id or row index outside the valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown config key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent on-disk data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A word alignment violates bounds, ordering or coverage.
class AlignmentError : public DataError {
 public:
  AlignmentError(const std::string& what, std::string utterance, long word)
      : DataError(what), utterance_(std::move(utterance)), word_(word) {}

  const std::string& utterance() const noexcept { return utterance_; }
  /// Index of the first offending word, or -1 for utterance-level errors.
  long word() const noexcept { return word_; }

 private:
  std::string utterance_;
  long word_;
};

/// Loss or gradient became non-finite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace stemm
