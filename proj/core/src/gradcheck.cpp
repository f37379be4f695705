#include "gaot/gradcheck.hpp"

#include <cmath>

namespace gaot::ad {

namespace {

struct FiniteCheckScope {
  explicit FiniteCheckScope(bool on) : saved(finite_checks()) { set_finite_checks(on); }
  ~FiniteCheckScope() { set_finite_checks(saved); }
  bool saved;
};

}  // namespace

double check_gradient(const std::function<Tensor()>& f, Tensor& p, double h) {
  if (!p.tracked()) throw std::invalid_argument("check_gradient: p must be a parameter");
  if (h <= 0.0) throw std::invalid_argument("check_gradient: h must be positive");

  zero_grad(p);
  {
    FiniteCheckScope checks(true);
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
  }
  const std::vector<double> analytic = p.g();

  double max_rel = 0.0;
  NoTape off;
  auto& pv = p.v();
  for (size_t i = 0; i < pv.size(); ++i) {
    const double saved = pv[i];
    pv[i] = saved + h;
    const double fp = f().scalar();
    pv[i] = saved - h;
    const double fm = f().scalar();
    pv[i] = saved;
    const double fd = (fp - fm) / (2.0 * h);
    const double rel = std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-12);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace gaot::ad
