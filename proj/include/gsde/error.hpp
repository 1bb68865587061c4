#pragma once

#include <stdexcept>
#include <string>

namespace gsde {

// Base of every error thrown by the library. The CLI maps the subclasses to
// exit codes: ConfigError/IoError/ShapeError -> 1, NumericError and the rest -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Divergence or non-finite state. `step` is the training step or sampler
// timestep where it was detected (-1 when not applicable).
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long step = -1) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace gsde
