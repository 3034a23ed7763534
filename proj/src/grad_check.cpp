#include "invlens/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "invlens/rng.hpp"

namespace invlens {

namespace {

double normwise_error(const std::vector<double>& tape_grad, const std::vector<double>& fd_grad,
                      const std::vector<std::size_t>& probed, double norm) {
  double worst = 0.0;
  for (std::size_t k = 0; k < probed.size(); ++k)
    worst = std::max(worst, std::abs(tape_grad[probed[k]] - fd_grad[k]));
  return worst / std::max(norm, 1e-8);
}

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tape tape;
  Tensor leaf = tape.leaf(x.detach());
  Tensor y = f(leaf);
  tape.backward(y);
  const std::vector<double> g = tape.grad(leaf);

  std::vector<double> fd(x.size());
  std::vector<std::size_t> probed(x.size());
  std::vector<double> probe(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probed[i] = i;
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig - h;
    const double fm = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig;
    fd[i] = (fp - fm) / (2.0 * h);
  }
  return normwise_error(g, fd, probed, inf_norm(g));
}

double grad_check(const std::function<Tensor(Tape*)>& f, const std::vector<Parameter*>& params, double h,
                  std::size_t max_coords, std::uint64_t seed) {
  Tape tape;
  Tensor y = f(&tape);
  tape.backward(y);

  Rng rng(seed);
  double norm = 0.0;
  std::vector<std::vector<double>> grads;
  for (Parameter* p : params) {
    grads.push_back(tape.grad(*p));
    norm = std::max(norm, inf_norm(grads.back()));
  }

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    std::vector<std::size_t> coords(p.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords > 0 && coords.size() > max_coords) {
      coords = rng.permutation(p.size());
      coords.resize(max_coords);
      std::sort(coords.begin(), coords.end());
    }
    std::vector<double> fd(coords.size());
    std::vector<double>& values = *p.value;
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const std::size_t i = coords[k];
      const double orig = values[i];
      values[i] = orig + h;
      const double fp = f(nullptr).item();
      values[i] = orig - h;
      const double fm = f(nullptr).item();
      values[i] = orig;
      fd[k] = (fp - fm) / (2.0 * h);
    }
    worst = std::max(worst, normwise_error(grads[pi], fd, coords, norm));
  }
  return worst;
}

}  // namespace invlens
