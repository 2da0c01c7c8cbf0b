#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ctxmem {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration or input value failed validation. `field()` names the
/// offending field using the JSON/CLI spelling (e.g. "fov", "k", "d_max").
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ConstraintUnsatisfiable : public Error {
 public:
  using Error::Error;
};

class OutOfOrder : public Error {
 public:
  using Error::Error;
};

class InvalidFrameCount : public Error {
 public:
  using Error::Error;
};

class TrajectoryTooShort : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

/// Raised when a snapshot or trajectory file cannot be decoded. `offset()` is
/// the byte offset at which decoding failed.
class CorruptFile : public Error {
 public:
  CorruptFile(std::uint64_t offset, const std::string& message)
      : Error("corrupt file at byte " + std::to_string(offset) + ": " + message), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace ctxmem
