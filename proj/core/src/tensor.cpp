#include "gaot/tensor.hpp"

#include <algorithm>

namespace gaot::ad {

namespace {
thread_local Tape* g_current_tape = nullptr;
thread_local bool g_finite_checks = false;
}  // namespace

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (const int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

double Tensor::scalar() const {
  if (numel() != 1) throw std::invalid_argument("scalar() on tensor of shape " + shape_str(shape));
  return (*val)[0];
}

int64_t Tensor::extent(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  return shape[axis];
}

Tensor constant(Shape shape, std::vector<double> data) {
  if (numel_of(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("constant: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  Tensor t;
  t.shape = std::move(shape);
  t.val = std::make_shared<std::vector<double>>(std::move(data));
  return t;
}

Tensor constant_scalar(double v) { return constant({1}, {v}); }

Tensor zeros(Shape shape) {
  Tensor t;
  t.val = std::make_shared<std::vector<double>>(numel_of(shape), 0.0);
  t.shape = std::move(shape);
  return t;
}

Tensor full(Shape shape, double v) {
  Tensor t;
  t.val = std::make_shared<std::vector<double>>(numel_of(shape), v);
  t.shape = std::move(shape);
  return t;
}

Tensor param(Shape shape, std::vector<double> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t.grad = std::make_shared<std::vector<double>>(t.numel(), 0.0);
  return t;
}

void zero_grad(Tensor& t) {
  if (t.grad) std::fill(t.grad->begin(), t.grad->end(), 0.0);
}

Tape::Tape() {
  prev_ = g_current_tape;
  g_current_tape = this;
}

Tape::~Tape() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

int Tape::record(std::function<void()> pull, const Buf& out_grad) {
  pulls_.push_back(std::move(pull));
  interior_grads_.push_back(out_grad);
  return static_cast<int>(pulls_.size()) - 1;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked())
    throw std::invalid_argument("backward: loss is not tracked by any tape");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape));
  for (const Buf& g : interior_grads_)
    if (g) std::fill(g->begin(), g->end(), 0.0);
  (*loss.grad)[0] += 1.0;
  const int start = loss.node >= 0 ? loss.node : -1;
  for (int i = start; i >= 0; --i) pulls_[i]();
}

NoTape::NoTape() : saved_(g_current_tape) { g_current_tape = nullptr; }
NoTape::~NoTape() { g_current_tape = saved_; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

}  // namespace gaot::ad
