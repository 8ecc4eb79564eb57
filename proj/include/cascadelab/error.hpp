#pragma once

#include <stdexcept>
#include <string>

namespace cascadelab {

// Invalid configuration or violated precondition. The CLI maps this family
// (and std::domain_error) to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// A ratio or normalizer whose denominator vanished on otherwise valid input.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cascadelab
