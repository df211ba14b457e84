#pragma once

#include <stdexcept>
#include <string>

namespace ghn {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor shape or extent mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (counts, ranges, labels).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Graph structure violation (cycles, bad node references).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Bad or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Region mismatch between graph mode and requested operation.
class ModeError : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized input.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Optimizer-level failure; carries the offending parameter name.
class OptimizerError : public Error {
 public:
  OptimizerError(const std::string& what, std::string param)
      : Error(what), param_name(std::move(param)) {}
  std::string param_name;
};

/// Training-step failure; carries the serialized graph for reproduction.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::string graph)
      : Error(what), graph_json(std::move(graph)) {}
  std::string graph_json;
};

/// Candidate assembly failure (missing weight bundle etc.).
class AssemblyError : public Error {
 public:
  using Error::Error;
};

/// Degenerate statistics (zero variance, too few samples).
class StatisticsError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ghn
