#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sampsde {

/// A model evaluated to shapes inconsistent with its declared dimensions.
class ModelDefinitionError : public std::runtime_error {
 public:
  explicit ModelDefinitionError(const std::string& what) : std::runtime_error(what) {}
};

/// A model map returned a non-finite value; the message names the map and point.
class EvaluationError : public std::runtime_error {
 public:
  explicit EvaluationError(const std::string& what) : std::runtime_error(what) {}
};

/// A simulated state stopped being finite. Carries the first bad node.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t node_index, double time)
      : std::runtime_error(what), node_index(node_index), time(time) {}
  std::size_t node_index;
  double time;
};

/// A construction would exceed a configured resource cap (e.g. grid nodes).
class ResourceError : public std::runtime_error {
 public:
  explicit ResourceError(const std::string& what) : std::runtime_error(what) {}
};

/// Experiment configuration rejected; the message carries the field path.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sampsde
