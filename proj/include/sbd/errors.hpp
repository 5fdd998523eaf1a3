#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sbd {

// Every failure the library reports derives from Error. The CLI maps the
// subclasses onto exit codes (see tools/sbd_cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector/matrix widths disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input violates a documented invariant (NaN payload, broken pair, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Bad magic bytes or unknown version.
class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

// Structurally broken file: truncated payload, trailing garbage.
class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, std::uint64_t byte_offset, std::int64_t record_index = -1)
      : Error(what + " (byte offset " + std::to_string(byte_offset) +
              (record_index >= 0 ? ", record " + std::to_string(record_index) : std::string()) + ")"),
        byte_offset_(byte_offset),
        record_index_(record_index) {}

  std::uint64_t byte_offset() const noexcept { return byte_offset_; }
  // -1 when the damage is in the file header.
  std::int64_t record_index() const noexcept { return record_index_; }

 private:
  std::uint64_t byte_offset_;
  std::int64_t record_index_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Data that cannot support the requested fit: one class only, too few pairs.
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  explicit TrainingDivergedError(std::size_t epoch)
      : Error("training diverged: mean loss is not finite after epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// Relative F1 shift with a zero-F1 source.
class UndefinedTransferError : public Error {
 public:
  using Error::Error;
};

class MissingTokensError : public Error {
 public:
  using Error::Error;
};

}  // namespace sbd
