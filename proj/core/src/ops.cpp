#include "gaot/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace gaot::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void check_finite(const char* op, const std::vector<double>& v) {
  if (!finite_checks()) return;
  for (const double x : v)
    if (!std::isfinite(x)) throw std::runtime_error(std::string(op) + ": produced a non-finite value");
}

bool recording(std::initializer_list<const Tensor*> ins) {
  if (!Tape::current()) return false;
  for (const Tensor* t : ins)
    if (t->tracked()) return true;
  return false;
}

Buf attach_grad(Tensor& out) {
  out.grad = std::make_shared<std::vector<double>>(out.numel(), 0.0);
  return out.grad;
}

void track(Tensor& out, std::function<void()> pull) {
  out.node = Tape::current()->record(std::move(pull), out.grad);
}

int normalize_axis(const char* op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  return axis;
}

// ---- broadcasting -------------------------------------------------------

struct BcPlan {
  Shape out;
  std::vector<int64_t> sa, sb;  // per-output-axis strides into a and b
};

BcPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  BcPlan p;
  p.out.resize(r);
  p.sa.resize(r);
  p.sb.resize(r);
  // row-major strides of the (left-padded) inputs
  std::vector<int64_t> stra(r, 0), strb(r, 0), ea(r, 1), eb(r, 1);
  for (int i = 0; i < ra; ++i) ea[r - ra + i] = a[i];
  for (int i = 0; i < rb; ++i) eb[r - rb + i] = b[i];
  int64_t acc = 1;
  for (int i = r - 1; i >= 0; --i) { stra[i] = acc; acc *= ea[i]; }
  acc = 1;
  for (int i = r - 1; i >= 0; --i) { strb[i] = acc; acc *= eb[i]; }
  for (int i = 0; i < r; ++i) {
    if (ea[i] == eb[i]) p.out[i] = ea[i];
    else if (ea[i] == 1) p.out[i] = eb[i];
    else if (eb[i] == 1) p.out[i] = ea[i];
    else
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcastable");
    p.sa[i] = ea[i] == 1 ? 0 : stra[i];
    p.sb[i] = eb[i] == 1 ? 0 : strb[i];
  }
  return p;
}

// Visits every output element in row-major order with the matching flat
// offsets into both inputs.
template <class F>
void bc_loop(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb, F&& f) {
  const int r = static_cast<int>(out.size());
  const int64_t n = numel_of(out);
  std::vector<int64_t> ctr(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (int d = r - 1; d >= 0; --d) {
      ia += sa[d];
      ib += sb[d];
      if (++ctr[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      ctr[d] = 0;
    }
  }
}

enum class BinKind { Add, Sub, Mul, Div };

Tensor make_binary(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw std::invalid_argument(std::string(name) + ": undefined operand");
  BcPlan p = broadcast_plan(name, a.shape, b.shape);
  Tensor out = zeros(p.out);
  {
    const auto& av = a.v();
    const auto& bv = b.v();
    auto& ov = out.v();
    if (a.shape == b.shape) {
      const int64_t n = out.numel();
      switch (kind) {
        case BinKind::Add: for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i]; break;
        case BinKind::Sub: for (int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i]; break;
        case BinKind::Mul: for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i]; break;
        case BinKind::Div: for (int64_t i = 0; i < n; ++i) ov[i] = av[i] / bv[i]; break;
      }
    } else {
      switch (kind) {
        case BinKind::Add:
          bc_loop(p.out, p.sa, p.sb, [&](int64_t i, int64_t ia, int64_t ib) { ov[i] = av[ia] + bv[ib]; });
          break;
        case BinKind::Sub:
          bc_loop(p.out, p.sa, p.sb, [&](int64_t i, int64_t ia, int64_t ib) { ov[i] = av[ia] - bv[ib]; });
          break;
        case BinKind::Mul:
          bc_loop(p.out, p.sa, p.sb, [&](int64_t i, int64_t ia, int64_t ib) { ov[i] = av[ia] * bv[ib]; });
          break;
        case BinKind::Div:
          bc_loop(p.out, p.sa, p.sb, [&](int64_t i, int64_t ia, int64_t ib) { ov[i] = av[ia] / bv[ib]; });
          break;
      }
    }
    check_finite(name, ov);
  }
  if (recording({&a, &b})) {
    const Buf ag = a.grad, bg = b.grad, av = a.val, bv = b.val;
    const Buf og = attach_grad(out);
    track(out, [kind, p = std::move(p), ag, bg, av, bv, og, same = a.shape == b.shape]() {
      const auto& o = *og;
      if (same) {
        const int64_t n = static_cast<int64_t>(o.size());
        switch (kind) {
          case BinKind::Add:
            if (ag) for (int64_t i = 0; i < n; ++i) (*ag)[i] += o[i];
            if (bg) for (int64_t i = 0; i < n; ++i) (*bg)[i] += o[i];
            break;
          case BinKind::Sub:
            if (ag) for (int64_t i = 0; i < n; ++i) (*ag)[i] += o[i];
            if (bg) for (int64_t i = 0; i < n; ++i) (*bg)[i] -= o[i];
            break;
          case BinKind::Mul:
            if (ag) for (int64_t i = 0; i < n; ++i) (*ag)[i] += o[i] * (*bv)[i];
            if (bg) for (int64_t i = 0; i < n; ++i) (*bg)[i] += o[i] * (*av)[i];
            break;
          case BinKind::Div:
            if (ag) for (int64_t i = 0; i < n; ++i) (*ag)[i] += o[i] / (*bv)[i];
            if (bg) for (int64_t i = 0; i < n; ++i) (*bg)[i] -= o[i] * (*av)[i] / ((*bv)[i] * (*bv)[i]);
            break;
        }
      } else {
        bc_loop(p.out, p.sa, p.sb, [&](int64_t i, int64_t ia, int64_t ib) {
          switch (kind) {
            case BinKind::Add:
              if (ag) (*ag)[ia] += o[i];
              if (bg) (*bg)[ib] += o[i];
              break;
            case BinKind::Sub:
              if (ag) (*ag)[ia] += o[i];
              if (bg) (*bg)[ib] -= o[i];
              break;
            case BinKind::Mul:
              if (ag) (*ag)[ia] += o[i] * (*bv)[ib];
              if (bg) (*bg)[ib] += o[i] * (*av)[ia];
              break;
            case BinKind::Div:
              if (ag) (*ag)[ia] += o[i] / (*bv)[ib];
              if (bg) (*bg)[ib] -= o[i] * (*av)[ia] / ((*bv)[ib] * (*bv)[ib]);
              break;
          }
        });
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return make_binary("add", BinKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return make_binary("sub", BinKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return make_binary("mul", BinKind::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return make_binary("div", BinKind::Div, a, b); }

// ---- matmul -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expects rank-2 operands, got " + shape_str(a.shape) + " x " +
                                shape_str(b.shape));
  const int64_t m = a.shape[0], k = a.shape[1], k2 = b.shape[0], n = b.shape[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape) + " x " + shape_str(b.shape));
  Tensor out = zeros({m, n});
  // Forward rows are computed with a fixed per-row accumulation order so
  // each output row depends only on the matching input row, bit for bit,
  // regardless of how many rows the batch holds.  Eigen's blocked product
  // changes rounding with the row count, which would break exact
  // row-duplication invariants of per-point decoding.
  {
    const double* __restrict av = a.val->data();
    const double* __restrict bv = b.val->data();
    double* __restrict ov = out.val->data();
    for (int64_t i = 0; i < m; ++i) {
      const double* arow = av + i * k;
      double* orow = ov + i * n;
      for (int64_t kk = 0; kk < k; ++kk) {
        const double s = arow[kk];
        const double* brow = bv + kk * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += s * brow[j];
      }
    }
  }
  check_finite("matmul", out.v());
  if (recording({&a, &b})) {
    const Buf ag = a.grad, bg = b.grad, av = a.val, bv = b.val;
    const Buf og = attach_grad(out);
    track(out, [m, k, n, ag, bg, av, bv, og]() {
      ConstMap dC(og->data(), m, n);
      if (ag) MutMap(ag->data(), m, k).noalias() += dC * ConstMap(bv->data(), k, n).transpose();
      if (bg) MutMap(bg->data(), k, n).noalias() += ConstMap(av->data(), m, k).transpose() * dC;
    });
  }
  return out;
}

// ---- scalar ops ---------------------------------------------------------

Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out = zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.v()[i] = a.v()[i] * c;
  check_finite("scalar_mul", out.v());
  if (recording({&a})) {
    const Buf ag = a.grad;
    const Buf og = attach_grad(out);
    track(out, [c, ag, og]() {
      if (!ag) return;
      for (size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i] * c;
    });
  }
  return out;
}

Tensor scalar_add(const Tensor& a, double c) {
  Tensor out = zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.v()[i] = a.v()[i] + c;
  check_finite("scalar_add", out.v());
  if (recording({&a})) {
    const Buf ag = a.grad;
    const Buf og = attach_grad(out);
    track(out, [ag, og]() {
      if (!ag) return;
      for (size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i];
    });
  }
  return out;
}

// ---- shape ops ----------------------------------------------------------

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = xs[0].rank();
  const int ax = normalize_axis("concat", axis, rank);
  Shape out_shape = xs[0].shape;
  int64_t total = 0;
  for (const Tensor& x : xs) {
    if (x.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != ax && x.shape[i] != out_shape[i])
        throw std::invalid_argument("concat: extent mismatch off the concat axis");
    total += x.shape[ax];
  }
  out_shape[ax] = total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= out_shape[i];
  for (int i = ax + 1; i < rank; ++i) inner *= out_shape[i];

  Tensor out = zeros(out_shape);
  int64_t col = 0;  // running offset along the concat axis, in inner-blocks
  struct Piece { Buf val, grad; int64_t width, col; };
  std::vector<Piece> pieces;
  pieces.reserve(xs.size());
  for (const Tensor& x : xs) {
    const int64_t w = x.shape[ax] * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(x.val->data() + o * w, w, out.val->data() + o * total * inner + col);
    pieces.push_back({x.val, x.grad, w, col});
    col += w;
  }
  check_finite("concat", out.v());

  bool any = false;
  for (const Tensor& x : xs) any = any || x.tracked();
  if (Tape::current() && any) {
    const Buf og = attach_grad(out);
    track(out, [pieces = std::move(pieces), outer, row = total * inner, og]() {
      for (const auto& pc : pieces) {
        if (!pc.grad) continue;
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = og->data() + o * row + pc.col;
          double* dst = pc.grad->data() + o * pc.width;
          for (int64_t j = 0; j < pc.width; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  const int ax = normalize_axis("slice", axis, x.rank());
  if (start < 0 || len < 0 || start + len > x.shape[ax])
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") out of bounds for extent " + std::to_string(x.shape[ax]));
  Shape out_shape = x.shape;
  out_shape[ax] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.shape[i];
  for (int i = ax + 1; i < x.rank(); ++i) inner *= x.shape[i];
  const int64_t in_row = x.shape[ax] * inner, out_row = len * inner, off = start * inner;

  Tensor out = zeros(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(x.val->data() + o * in_row + off, out_row, out.val->data() + o * out_row);
  check_finite("slice", out.v());
  if (recording({&x})) {
    const Buf xg = x.grad;
    const Buf og = attach_grad(out);
    track(out, [xg, outer, in_row, out_row, off, og]() {
      if (!xg) return;
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = og->data() + o * out_row;
        double* dst = xg->data() + o * in_row + off;
        for (int64_t j = 0; j < out_row; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(shape));
  Tensor out;
  out.shape = std::move(shape);
  out.val = x.val;  // same storage, tensors are immutable once built
  if (recording({&x})) {
    const Buf xg = x.grad;
    const Buf og = attach_grad(out);
    track(out, [xg, og]() {
      if (!xg) return;
      for (size_t i = 0; i < og->size(); ++i) (*xg)[i] += (*og)[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose: expects rank 2, got " + shape_str(x.shape));
  const int64_t m = x.shape[0], n = x.shape[1];
  Tensor out = zeros({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.v()[j * m + i] = x.v()[i * n + j];
  if (recording({&x})) {
    const Buf xg = x.grad;
    const Buf og = attach_grad(out);
    track(out, [xg, m, n, og]() {
      if (!xg) return;
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < m; ++i) (*xg)[i * n + j] += (*og)[j * m + i];
    });
  }
  return out;
}

// ---- reductions ---------------------------------------------------------

namespace {

struct AxisSplit {
  int64_t outer, n, inner;
};

AxisSplit axis_split(const Shape& s, int ax) {
  AxisSplit sp{1, s[ax], 1};
  for (int i = 0; i < ax; ++i) sp.outer *= s[i];
  for (size_t i = ax + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

Shape reduced_shape(const Shape& s, int ax, bool keepdim) {
  Shape out = s;
  if (keepdim) out[ax] = 1;
  else out.erase(out.begin() + ax);
  if (out.empty()) out = {1};
  return out;
}

Tensor reduce_op(const char* name, const Tensor& x, int axis, bool keepdim, bool is_mean) {
  const int ax = normalize_axis(name, axis, x.rank());
  const AxisSplit sp = axis_split(x.shape, ax);
  Tensor out = zeros(reduced_shape(x.shape, ax, keepdim));
  const double scale = is_mean ? 1.0 / static_cast<double>(sp.n) : 1.0;
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t j = 0; j < sp.inner; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < sp.n; ++i) acc += x.v()[(o * sp.n + i) * sp.inner + j];
      out.v()[o * sp.inner + j] = acc * scale;
    }
  check_finite(name, out.v());
  if (recording({&x})) {
    const Buf xg = x.grad;
    const Buf og = attach_grad(out);
    track(out, [xg, sp, scale, og]() {
      if (!xg) return;
      for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t j = 0; j < sp.inner; ++j) {
          const double g = (*og)[o * sp.inner + j] * scale;
          for (int64_t i = 0; i < sp.n; ++i) (*xg)[(o * sp.n + i) * sp.inner + j] += g;
        }
    });
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& x, int axis, bool keepdim) { return reduce_op("sum", x, axis, keepdim, false); }
Tensor mean(const Tensor& x, int axis, bool keepdim) { return reduce_op("mean", x, axis, keepdim, true); }

Tensor sum_all(const Tensor& x) {
  Tensor out = zeros({1});
  double acc = 0.0;
  for (const double v : x.v()) acc += v;
  out.v()[0] = acc;
  check_finite("sum_all", out.v());
  if (recording({&x})) {
    const Buf xg = x.grad;
    const Buf og = attach_grad(out);
    track(out, [xg, og]() {
      if (!xg) return;
      const double g = (*og)[0];
      for (auto& gv : *xg) gv += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor out = zeros({1});
  double acc = 0.0;
  for (const double v : x.v()) acc += v;
  out.v()[0] = acc * inv;
  check_finite("mean_all", out.v());
  if (recording({&x})) {
    const Buf xg = x.grad;
    const Buf og = attach_grad(out);
    track(out, [xg, inv, og]() {
      if (!xg) return;
      const double g = (*og)[0] * inv;
      for (auto& gv : *xg) gv += g;
    });
  }
  return out;
}

// ---- pointwise nonlinearities -------------------------------------------

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out = zeros(x.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.v()[i] = fwd(x.v()[i]);
  check_finite(name, out.v());
  if (recording({&x})) {
    const Buf xg = x.grad, xv = x.val, ov = out.val;
    const Buf og = attach_grad(out);
    track(out, [xg, xv, ov, bwd, og]() {
      if (!xg) return;
      for (size_t i = 0; i < og->size(); ++i) (*xg)[i] += (*og)[i] * bwd((*xv)[i], (*ov)[i]);
    });
  }
  return out;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor exp(const Tensor& x) {
  return unary_op("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor ln(const Tensor& x) {
  return unary_op("ln", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary_op("tanh", x, [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor rsqrt(const Tensor& x) {
  return unary_op("rsqrt", x, [](double v) { return 1.0 / std::sqrt(v); },
                  [](double, double y) { return -0.5 * y * y * y; });
}

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis("softmax", axis, x.rank());
  const AxisSplit sp = axis_split(x.shape, ax);
  Tensor out = zeros(x.shape);
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t j = 0; j < sp.inner; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t i = 0; i < sp.n; ++i) mx = std::max(mx, x.v()[(o * sp.n + i) * sp.inner + j]);
      double z = 0.0;
      for (int64_t i = 0; i < sp.n; ++i) {
        const double e = std::exp(x.v()[(o * sp.n + i) * sp.inner + j] - mx);
        out.v()[(o * sp.n + i) * sp.inner + j] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (int64_t i = 0; i < sp.n; ++i) out.v()[(o * sp.n + i) * sp.inner + j] *= inv;
    }
  check_finite("softmax", out.v());
  if (recording({&x})) {
    const Buf xg = x.grad, ov = out.val;
    const Buf og = attach_grad(out);
    track(out, [xg, ov, sp, og]() {
      if (!xg) return;
      for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t j = 0; j < sp.inner; ++j) {
          double dot = 0.0;
          for (int64_t i = 0; i < sp.n; ++i) {
            const int64_t idx = (o * sp.n + i) * sp.inner + j;
            dot += (*ov)[idx] * (*og)[idx];
          }
          for (int64_t i = 0; i < sp.n; ++i) {
            const int64_t idx = (o * sp.n + i) * sp.inner + j;
            (*xg)[idx] += (*ov)[idx] * ((*og)[idx] - dot);
          }
        }
    });
  }
  return out;
}

// ---- indexed ops --------------------------------------------------------

namespace {

int64_t row_size(const Tensor& x) {
  int64_t r = 1;
  for (int i = 1; i < x.rank(); ++i) r *= x.shape[i];
  return r;
}

void validate_offsets(const char* name, const std::vector<int64_t>& offsets, int64_t rows) {
  if (offsets.empty() || offsets.front() != 0)
    throw std::invalid_argument(std::string(name) + ": offsets must start at 0");
  for (size_t i = 1; i < offsets.size(); ++i)
    if (offsets[i] < offsets[i - 1])
      throw std::invalid_argument(std::string(name) + ": offsets must be non-decreasing");
  if (offsets.back() != rows)
    throw std::invalid_argument(std::string(name) + ": offsets cover " + std::to_string(offsets.back()) +
                                " rows, tensor has " + std::to_string(rows));
}

}  // namespace

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
  if (x.rank() < 1) throw std::invalid_argument("gather_rows: scalar input");
  const int64_t rows = x.shape[0], rs = row_size(x);
  for (const int64_t i : idx)
    if (i < 0 || i >= rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(i) + " out of range [0," +
                                  std::to_string(rows) + ")");
  Shape out_shape = x.shape;
  out_shape[0] = static_cast<int64_t>(idx.size());
  Tensor out = zeros(out_shape);
  for (size_t k = 0; k < idx.size(); ++k)
    std::copy_n(x.val->data() + idx[k] * rs, rs, out.val->data() + static_cast<int64_t>(k) * rs);
  if (recording({&x})) {
    const Buf xg = x.grad;
    auto ids = std::make_shared<std::vector<int64_t>>(idx);
    const Buf og = attach_grad(out);
    track(out, [xg, ids, rs, og]() {
      if (!xg) return;
      for (size_t k = 0; k < ids->size(); ++k) {
        const double* src = og->data() + static_cast<int64_t>(k) * rs;
        double* dst = xg->data() + (*ids)[k] * rs;
        for (int64_t j = 0; j < rs; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor segment_sum(const Tensor& x, const std::vector<int64_t>& offsets) {
  if (x.rank() < 1) throw std::invalid_argument("segment_sum: scalar input");
  validate_offsets("segment_sum", offsets, x.shape[0]);
  const int64_t buckets = static_cast<int64_t>(offsets.size()) - 1, rs = row_size(x);
  Shape out_shape = x.shape;
  out_shape[0] = buckets;
  Tensor out = zeros(out_shape);
  for (int64_t b = 0; b < buckets; ++b) {
    double* dst = out.val->data() + b * rs;
    for (int64_t r = offsets[b]; r < offsets[b + 1]; ++r) {
      const double* src = x.val->data() + r * rs;
      for (int64_t j = 0; j < rs; ++j) dst[j] += src[j];
    }
  }
  check_finite("segment_sum", out.v());
  if (recording({&x})) {
    const Buf xg = x.grad;
    auto offs = std::make_shared<std::vector<int64_t>>(offsets);
    const Buf og = attach_grad(out);
    track(out, [xg, offs, rs, og]() {
      if (!xg) return;
      const int64_t buckets = static_cast<int64_t>(offs->size()) - 1;
      for (int64_t b = 0; b < buckets; ++b) {
        const double* src = og->data() + b * rs;
        for (int64_t r = (*offs)[b]; r < (*offs)[b + 1]; ++r) {
          double* dst = xg->data() + r * rs;
          for (int64_t j = 0; j < rs; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor segment_softmax(const Tensor& x, const std::vector<int64_t>& offsets) {
  if (x.numel() != x.shape[0] * (x.rank() == 2 ? x.shape[1] : 1) || (x.rank() == 2 && x.shape[1] != 1) || x.rank() > 2)
    throw std::invalid_argument("segment_softmax: expects [E] or [E,1], got " + shape_str(x.shape));
  validate_offsets("segment_softmax", offsets, x.shape[0]);
  const int64_t buckets = static_cast<int64_t>(offsets.size()) - 1;
  Tensor out = zeros(x.shape);
  for (int64_t b = 0; b < buckets; ++b) {
    const int64_t lo = offsets[b], hi = offsets[b + 1];
    if (lo == hi) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t r = lo; r < hi; ++r) mx = std::max(mx, x.v()[r]);
    double z = 0.0;
    for (int64_t r = lo; r < hi; ++r) {
      out.v()[r] = std::exp(x.v()[r] - mx);
      z += out.v()[r];
    }
    const double inv = 1.0 / z;
    for (int64_t r = lo; r < hi; ++r) out.v()[r] *= inv;
  }
  check_finite("segment_softmax", out.v());
  if (recording({&x})) {
    const Buf xg = x.grad, ov = out.val;
    auto offs = std::make_shared<std::vector<int64_t>>(offsets);
    const Buf og = attach_grad(out);
    track(out, [xg, ov, offs, og]() {
      if (!xg) return;
      const int64_t buckets = static_cast<int64_t>(offs->size()) - 1;
      for (int64_t b = 0; b < buckets; ++b) {
        const int64_t lo = (*offs)[b], hi = (*offs)[b + 1];
        double dot = 0.0;
        for (int64_t r = lo; r < hi; ++r) dot += (*ov)[r] * (*og)[r];
        for (int64_t r = lo; r < hi; ++r) (*xg)[r] += (*ov)[r] * ((*og)[r] - dot);
      }
    });
  }
  return out;
}

// ---- dropout and rotation ------------------------------------------------

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  Tensor out = zeros(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out.v()[i] = x.v()[i] * m;
  }
  if (recording({&x})) {
    const Buf xg = x.grad;
    const Buf og = attach_grad(out);
    track(out, [xg, mask, og]() {
      if (!xg) return;
      for (size_t i = 0; i < og->size(); ++i) (*xg)[i] += (*og)[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor rotate_pairs(const Tensor& x, const std::vector<double>& angles) {
  if (x.rank() != 2 || x.shape[1] % 2 != 0)
    throw std::invalid_argument("rotate_pairs: expects [N, even], got " + shape_str(x.shape));
  const int64_t n = x.shape[0], c = x.shape[1], pairs = c / 2;
  if (static_cast<int64_t>(angles.size()) != n * pairs)
    throw std::invalid_argument("rotate_pairs: need " + std::to_string(n * pairs) + " angles, got " +
                                std::to_string(angles.size()));
  auto trig = std::make_shared<std::vector<double>>(2 * n * pairs);  // interleaved cos, sin
  Tensor out = zeros(x.shape);
  for (int64_t r = 0; r < n; ++r)
    for (int64_t p = 0; p < pairs; ++p) {
      const double a = angles[r * pairs + p];
      const double co = std::cos(a), si = std::sin(a);
      (*trig)[2 * (r * pairs + p)] = co;
      (*trig)[2 * (r * pairs + p) + 1] = si;
      const double x0 = x.v()[r * c + 2 * p], x1 = x.v()[r * c + 2 * p + 1];
      out.v()[r * c + 2 * p] = co * x0 - si * x1;
      out.v()[r * c + 2 * p + 1] = si * x0 + co * x1;
    }
  check_finite("rotate_pairs", out.v());
  if (recording({&x})) {
    const Buf xg = x.grad;
    const Buf og = attach_grad(out);
    track(out, [xg, trig, n, c, pairs, og]() {
      if (!xg) return;
      for (int64_t r = 0; r < n; ++r)
        for (int64_t p = 0; p < pairs; ++p) {
          const double co = (*trig)[2 * (r * pairs + p)], si = (*trig)[2 * (r * pairs + p) + 1];
          const double d0 = (*og)[r * c + 2 * p], d1 = (*og)[r * c + 2 * p + 1];
          (*xg)[r * c + 2 * p] += co * d0 + si * d1;
          (*xg)[r * c + 2 * p + 1] += -si * d0 + co * d1;
        }
    });
  }
  return out;
}

}  // namespace gaot::ad
