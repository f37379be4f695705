#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaot::ad {

using Shape = std::vector<int64_t>;
using Buf = std::shared_ptr<std::vector<double>>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major real64 tensor handle.  Copies are shallow; the value and
// gradient buffers are shared.  A tensor is "tracked" when it owns a gradient
// buffer: either a leaf parameter, or an op output recorded on a live tape.
// Untracked tensors never receive gradient contributions.
struct Tensor {
  Shape shape;
  Buf val;
  Buf grad;       // null for constants
  int node = -1;  // index on the recording tape, -1 for leaves and constants

  Tensor() = default;

  int64_t numel() const { return numel_of(shape); }
  bool tracked() const { return grad != nullptr; }
  bool defined() const { return val != nullptr; }

  std::vector<double>& v() { return *val; }
  const std::vector<double>& v() const { return *val; }
  std::vector<double>& g() { return *grad; }
  const std::vector<double>& g() const { return *grad; }

  double scalar() const;
  int64_t extent(int axis) const;
  int rank() const { return static_cast<int>(shape.size()); }
};

Tensor constant(Shape shape, std::vector<double> data);
Tensor constant_scalar(double v);
Tensor zeros(Shape shape);
Tensor full(Shape shape, double v);

// Leaf with a persistent gradient buffer.  backward() accumulates into it;
// call zero_grad between optimizer steps.
Tensor param(Shape shape, std::vector<double> data);
void zero_grad(Tensor& t);

// Reverse-mode tape.  Constructing a tape makes it current (stack
// discipline); ops record pull-back closures while a tape is current and at
// least one input is tracked.  backward(loss) zeroes the gradients of every
// recorded intermediate, seeds d(loss)/d(loss) = 1 and runs the closures in
// reverse recording order, so each node is visited exactly once.  Leaf
// gradients are left untouched before the sweep, which makes repeated
// backward calls accumulate.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void backward(const Tensor& loss);
  size_t node_count() const { return pulls_.size(); }

  static Tape* current();

  // recording interface, used by the op library
  int record(std::function<void()> pull, const Buf& out_grad);

 private:
  std::vector<std::function<void()>> pulls_;
  std::vector<Buf> interior_grads_;
  Tape* prev_ = nullptr;
};

// RAII guard that disables taping (e.g. finite-difference evaluations).
class NoTape {
 public:
  NoTape();
  ~NoTape();

 private:
  Tape* saved_;
};

// When enabled, every primitive validates its output for NaN/Inf and throws
// naming the offending op.  Off by default; gradient checks switch it on.
void set_finite_checks(bool on);
bool finite_checks();

}  // namespace gaot::ad
