#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pcdiff {

/// Operand shapes do not fit the primitive or model.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file. `offset` is the byte position of the offending
/// record, or -1 when not applicable.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::int64_t offset = -1)
      : std::runtime_error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")"
                                       : what),
        offset_(offset) {}
  std::int64_t offset() const { return offset_; }

 private:
  std::int64_t offset_;
};

/// A NaN or infinity showed up where a finite value is required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pcdiff
