#pragma once

#include <stdexcept>
#include <string>

namespace dferc {

// Bad configs, malformed datasets, out-of-range values. The CLI maps this to
// exit code 1; everything else exits 2.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a training step produces a non-finite loss; carries the step
// index and the component losses in the message.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dferc
