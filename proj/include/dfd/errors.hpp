#pragma once

#include <stdexcept>
#include <string>

namespace dfd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument, shape mismatch, out-of-range configuration.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Division by a vanishing schedule quantity (e.g. alpha_bar == 0).
class SingularityError : public Error {
 public:
  using Error::Error;
};

class DegeneratePsfError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A model was asked for something it cannot do (e.g. a VJP).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Ill-conditioned solve or non-finite value in an iteration.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, int step = -1) : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace dfd
