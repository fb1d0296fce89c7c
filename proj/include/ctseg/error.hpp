#pragma once

#include <stdexcept>
#include <string>

namespace ctseg {

// Base of all library errors. Subtypes map to distinct CLI exit codes.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class invalid_argument_error : public error {
 public:
  using error::error;
};

class unsupported_orientation_error : public error {
 public:
  using error::error;
};

class unsupported_format_error : public error {
 public:
  using error::error;
};

class empty_mask_error : public error {
 public:
  using error::error;
};

class generation_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

class diverged_training_error : public error {
 public:
  diverged_training_error(const std::string& what, int epoch, int step)
      : error(what), epoch(epoch), step(step) {}
  int epoch;
  int step;
};

class config_error : public error {
 public:
  using error::error;
};

inline void require(bool cond, const std::string& message) {
  if (!cond) throw invalid_argument_error(message);
}

}  // namespace ctseg
