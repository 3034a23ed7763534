#pragma once

// Test-only reference computations. Nothing here calls into the library's
// differentiation or flow code paths except through the black-box function
// being measured.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "invlens/rng.hpp"
#include "invlens/tensor.hpp"

namespace oracles {

inline void randomize(const std::vector<invlens::Parameter*>& params, invlens::Rng& rng, double std) {
  for (invlens::Parameter* p : params)
    for (double& v : *p->value) v = std * rng.normal();
}

using Matrix = std::vector<std::vector<double>>;

// Central-difference Jacobian, J[i][j] = d f_i / d x_j.
inline Matrix numerical_jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                                 std::vector<double> x, double h = 1e-6) {
  const std::size_t n = x.size();
  const std::size_t m = f(x).size();
  Matrix jac(m, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    const double orig = x[j];
    x[j] = orig + h;
    auto fp = f(x);
    x[j] = orig - h;
    auto fm = f(x);
    x[j] = orig;
    for (std::size_t i = 0; i < m; ++i) jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
  }
  return jac;
}

// log|det A| by Gaussian elimination with partial pivoting.
inline double log_abs_det(Matrix a) {
  const std::size_t n = a.size();
  double logdet = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (a[piv][c] == 0.0) throw std::runtime_error("singular matrix");
    std::swap(a[piv], a[c]);
    logdet += std::log(std::abs(a[c][c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return logdet;
}

}  // namespace oracles

namespace oracles {

// zbar = A [z; u] + b with z ~ N(0, I_dz), u ~ N(0, I_du). The conditional
// zbar | z is Gaussian with mean A_z z + b and covariance A_u A_u^T.
struct LinearGaussianWorld {
  std::size_t n = 4, dz = 2, du = 4;
  Matrix a;               // n x (dz + du)
  std::vector<double> b;  // n

  LinearGaussianWorld(std::size_t n_, std::size_t dz_, std::size_t du_, invlens::Rng& rng)
      : n(n_), dz(dz_), du(du_), a(n_, std::vector<double>(dz_ + du_)), b(n_) {
    for (auto& row : a)
      for (double& v : row) v = 0.6 * rng.normal();
    for (double& v : b) v = rng.normal();
  }

  std::vector<double> mean_given(const std::vector<double>& z) const {
    std::vector<double> m = b;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dz; ++j) m[i] += a[i][j] * z[j];
    return m;
  }

  Matrix cov_given() const {
    Matrix c(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = dz; j < dz + du; ++j) c[i][k] += a[i][j] * a[k][j];
    return c;
  }

  Matrix cov_total() const {
    Matrix c(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < dz + du; ++j) c[i][k] += a[i][j] * a[k][j];
    return c;
  }

  // tr(Sigma_cond) / tr(Sigma_total)
  double trace_ratio() const {
    const Matrix c = cov_given(), t = cov_total();
    double tc = 0, tt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tc += c[i][i];
      tt += t[i][i];
    }
    return tc / tt;
  }

  // Rows of z [count x dz] and zbar [count x n].
  std::pair<invlens::Tensor, invlens::Tensor> sample(invlens::Rng& rng, std::size_t count) const {
    std::vector<double> zs, zbars;
    for (std::size_t r = 0; r < count; ++r) {
      std::vector<double> z(dz), u(du);
      for (double& v : z) v = rng.normal();
      for (double& v : u) v = rng.normal();
      std::vector<double> m = mean_given(z);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < du; ++j) m[i] += a[i][dz + j] * u[j];
      zs.insert(zs.end(), z.begin(), z.end());
      zbars.insert(zbars.end(), m.begin(), m.end());
    }
    return {invlens::Tensor({count, dz}, zs), invlens::Tensor({count, n}, zbars)};
  }
};

inline std::vector<double> column_means(const invlens::Tensor& m) {
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += m.at(i, j);
  for (double& v : out) v /= static_cast<double>(r);
  return out;
}

// Unbiased sample covariance of the columns.
inline Matrix column_cov(const invlens::Tensor& m) {
  const std::size_t r = m.dim(0), c = m.dim(1);
  const auto mu = column_means(m);
  Matrix out(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t k = 0; k < c; ++k) out[j][k] += (m.at(i, j) - mu[j]) * (m.at(i, k) - mu[k]);
  for (auto& row : out)
    for (double& v : row) v /= static_cast<double>(r - 1);
  return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline std::vector<double> column(const invlens::Tensor& m, std::size_t j) {
  std::vector<double> out(m.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.at(i, j);
  return out;
}

// Random chain of dense layers with a randomly chosen nonlinearity per layer,
// ending in a scalar, as a function of x.
struct RandomGraph {
  std::vector<invlens::Tensor> weights;
  std::vector<int> ops;

  invlens::Tensor operator()(const invlens::Tensor& x) const {
    invlens::Tensor h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      const invlens::Tensor a = matmul(h, weights[i]);
      switch (ops[i]) {
        case 0:
          h = tanh(a);
          break;
        case 1:
          h = leaky_relu(a);
          break;
        case 2:
          h = tanh(a) * tanh(a) + a;
          break;
        case 3:
          h = log_softmax(a);
          break;
        case 4:
          h = exp(scale(tanh(a), 0.5));
          break;
        default: {
          // swap the two halves of the features
          const std::size_t w = a.dim(1);
          if (w < 2) {
            h = tanh(a);
            break;
          }
          const auto parts = split_sizes(a, {w / 2, w - w / 2}, 1);
          h = invlens::concat({tanh(parts[1]), parts[0]}, 1);
        }
      }
    }
    return sum(h) + mean(square(h));
  }
};

inline RandomGraph make_graph(invlens::Rng& rng, std::size_t in_dim) {
  RandomGraph g;
  const std::size_t depth = 1 + rng.below(6);
  std::size_t width = in_dim;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t next = 1 + rng.below(16);
    g.weights.push_back(scale(rng.normal_tensor({width, next}), 1.0 / std::sqrt(static_cast<double>(width))));
    g.ops.push_back(static_cast<int>(rng.below(6)));
    width = next;
  }
  return g;
}

}  // namespace oracles
