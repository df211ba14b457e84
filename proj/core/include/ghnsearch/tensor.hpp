#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ghnsearch/errors.hpp"

namespace ghn {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense row-major 64-bit float tensor with an optional gradient buffer.
///
/// Copying a Tensor aliases the same storage (shared handle semantics), so a
/// parameter held by a model and captured by a tape closure is one buffer.
/// Gradients accumulate: backward adds into grad, it never overwrites, so two
/// identical forward+backward rounds without zero_grad() yield exactly twice
/// the gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor full(const Shape& shape, double v) { return Tensor(shape, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  size_t rank() const;
  int64_t dim(size_t i) const;

  /// The handle is shallow-const: data and grad buffers are shared state,
  /// reachable through const handles (same idiom as a shared_ptr).
  double* data() const;
  double at(int64_t i) const { return data()[i]; }

  /// Scalar read; throws DimensionError unless numel() == 1.
  double value() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);

  /// Gradient buffer, zero-allocated on first access.
  std::vector<double>& grad() const;
  const std::vector<double>* grad_if_allocated() const;
  bool has_grad() const;
  void zero_grad() const;

  /// Deep copy of the values; no grad, no recording.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first touched
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Records the reverse-mode program. Operations append a backward closure in
/// execution order; backward() replays them strictly in reverse, which is a
/// valid reverse-topological order of the recorded computation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_rule);
  size_t size() const { return rules_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
  /// Gradients accumulate into the participating tensors' grad buffers.
  void backward(Tensor& loss);

  /// The tape active on this thread, or nullptr when running untaped
  /// (pure inference).
  static Tape* current();

 private:
  friend class TapeScope;
  std::vector<std::function<void()>> rules_;
};

/// RAII activation of a tape on the current thread. Distinct threads can run
/// distinct tapes concurrently; a thread with no active scope records nothing.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace ghn
