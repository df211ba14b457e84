#include "ghnsearch/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ghn {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

namespace {
void check_shape(const Shape& s) {
  for (int64_t d : s) {
    if (d < 1) throw DimensionError("tensor dimensions must be >= 1, got " + shape_str(s));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(shape_numel(impl_->shape)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

const Shape& Tensor::shape() const { return impl_->shape; }
int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->data.size()); }
size_t Tensor::rank() const { return impl_->shape.size(); }
int64_t Tensor::dim(size_t i) const { return impl_->shape.at(i); }

double* Tensor::data() const { return impl_->data.data(); }

double Tensor::value() const {
  if (numel() != 1) throw DimensionError("value() requires a scalar, got " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>* Tensor::grad_if_allocated() const {
  return impl_->grad.empty() ? nullptr : &impl_->grad;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor out;
  out.impl_ = std::make_shared<Impl>();
  out.impl_->shape = impl_->shape;
  out.impl_->data = impl_->data;
  return out;
}

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {
thread_local Tape* t_current_tape = nullptr;
}

void Tape::record(std::function<void()> backward_rule) {
  rules_.push_back(std::move(backward_rule));
}

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward() expects a scalar loss, got " + shape_str(loss.shape()));
  }
  loss.grad()[0] += 1.0;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
}

Tape* Tape::current() { return t_current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(t_current_tape) { t_current_tape = &tape; }
TapeScope::~TapeScope() { t_current_tape = previous_; }

}  // namespace ghn
