#pragma once

#include <stdexcept>
#include <string>

namespace m3ae {

/// Base class for every error raised by the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised while reading subjects, volumes or checkpoints from disk.
class IngestError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class PreprocessError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient went non-finite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace m3ae
