#pragma once

#include <stdexcept>
#include <string>

namespace bayernet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or raster shapes that do not satisfy an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyper-parameters or structural configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed checkpoints, images, or homography files.
class LoadError : public Error {
 public:
  using Error::Error;
};

// A loss or parameter became NaN/Inf during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace bayernet
