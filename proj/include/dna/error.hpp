#pragma once

#include <stdexcept>
#include <string>

namespace dna {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid caller input: bad arguments, malformed files, violated preconditions.
/// The CLI maps this family to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure while reading or writing.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Rejection of an activation dump, either on load or before a write.
class FormatError : public InputError {
 public:
  enum class Kind {
    bad_magic,
    unsupported_version,
    truncated,
    size_mismatch,
    non_finite,
    invalid_labels,
    invalid_shape,
  };

  FormatError(Kind kind, const std::string& what) : InputError(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace dna
