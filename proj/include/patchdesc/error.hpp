#pragma once

#include <stdexcept>
#include <string>

namespace patchdesc {

// Tensor shapes or layer wiring that do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed, truncated or corrupted files (checkpoints, raw datasets,
// descriptor files, configs).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A dataset that cannot satisfy a sampling or evaluation request.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values showing up during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace patchdesc
