#include "invlens/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace invlens {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_axis(const Tensor& a, std::size_t axis, const char* op) {
  if (axis >= a.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_string(a.shape()));
  }
}

// Splits a shape around an axis into (outer, extent, inner) strides.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  return out;
}

template <typename F>
Tensor unary(const Tensor& a, F&& f, std::function<void(std::span<const double>, Tape&)> bw) {
  std::vector<double> out(a.size());
  auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return record(a.shape(), std::move(out), {&a}, std::move(bw));
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : Tensor(std::move(shape), std::make_shared<const std::vector<double>>(std::move(values))) {}

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_size(shape_) != data_->size()) {
    throw DimensionError("tensor: shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " + std::to_string(data_->size()));
  }
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("dim: axis out of range for " + shape_string(shape_));
  return shape_[axis];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at: expected a matrix, got " + shape_string(shape_));
  return (*data_)[row * shape_[1] + col];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item: tensor of shape " + shape_string(shape_) + " is not a scalar");
  return (*data_)[0];
}

Tensor Tensor::detach() const { return Tensor(shape_, data_); }

// ---- Parameter -------------------------------------------------------------

Parameter::Parameter(std::string n, Shape s, std::vector<double> values)
    : name(std::move(n)), shape(std::move(s)), value(std::make_shared<std::vector<double>>(std::move(values))) {
  if (shape_size(shape) != value->size())
    throw DimensionError("parameter " + name + ": shape " + shape_string(shape) + " does not match value count");
}

Parameter::Parameter(const Parameter& other)
    : name(other.name),
      shape(other.shape),
      value(other.value ? std::make_shared<std::vector<double>>(*other.value) : nullptr) {}

Parameter& Parameter::operator=(const Parameter& other) {
  if (this != &other) *this = Parameter(other);
  return *this;
}

// ---- Tape ------------------------------------------------------------------

Tensor record(Shape shape, std::vector<double> values, const std::vector<const Tensor*>& parents,
              std::function<void(std::span<const double>, Tape&)> backward) {
  Tape* tape = nullptr;
  std::vector<std::size_t> ids;
  for (const Tensor* p : parents) {
    if (!p->tracked()) continue;
    if (tape && p->tape() != tape) throw StateError("operands are tracked by different tapes");
    tape = p->tape();
    ids.push_back(p->node());
  }
  if (!tape) return Tensor(std::move(shape), std::move(values));
  return tape->append(std::move(shape), std::make_shared<const std::vector<double>>(std::move(values)),
                      std::move(ids), std::move(backward));
}

Tensor Tape::append(Shape shape, std::shared_ptr<const std::vector<double>> data, std::vector<std::size_t> parents,
                    Backward backward) {
  Tensor t(std::move(shape), std::move(data));
  t.tape_ = this;
  t.node_ = nodes_.size();
  Node n;
  n.size = t.size();
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return t;
}

Tensor Tape::leaf(const Tensor& value) {
  if (value.tracked()) throw StateError("leaf: tensor is already tracked");
  return append(value.shape(), value.buffer(), {}, nullptr);
}

Tensor Tape::watch(const Parameter& param) {
  auto it = params_.find(&param);
  if (it != params_.end()) return it->second;
  Tensor t = append(param.shape, std::shared_ptr<const std::vector<double>>(param.value), {}, nullptr);
  params_.emplace(&param, t);
  return t;
}

void Tape::backward(const Tensor& root) {
  if (root.size() != 1)
    throw DimensionError("backward: root of shape " + shape_string(root.shape()) + " needs an explicit seed");
  const double one = 1.0;
  backward(root, std::span<const double>(&one, 1));
}

void Tape::backward(const Tensor& root, std::span<const double> seed) {
  if (root.tape() != this) throw StateError("backward: root is not recorded on this tape");
  if (seed.size() != root.size()) throw DimensionError("backward: seed size does not match root");
  for (Node& n : nodes_) n.grad.clear();
  nodes_[root.node()].grad.assign(seed.begin(), seed.end());
  visited_ = 0;
  for (std::size_t i = root.node() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    ++visited_;
    if (n.backward) n.backward(n.grad, *this);
  }
}

void Tape::accumulate(const Tensor& target, std::span<const double> grad) {
  if (!target.tracked()) return;
  if (target.tape() != this) throw StateError("accumulate: target belongs to another tape");
  Node& n = nodes_[target.node()];
  if (grad.size() != n.size) throw DimensionError("accumulate: gradient size mismatch");
  if (n.grad.empty()) {
    n.grad.assign(grad.begin(), grad.end());
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) n.grad[i] += grad[i];
  }
}

void Tape::accumulate(const Tensor& target, std::vector<double>&& grad) {
  if (!target.tracked()) return;
  if (target.tape() != this) throw StateError("accumulate: target belongs to another tape");
  Node& n = nodes_[target.node()];
  if (grad.size() != n.size) throw DimensionError("accumulate: gradient size mismatch");
  if (n.grad.empty()) {
    n.grad = std::move(grad);
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) n.grad[i] += grad[i];
  }
}

std::span<const double> Tape::grad_view(const Parameter& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) return {};
  return nodes_[it->second.node()].grad;
}

std::vector<double> Tape::grad(const Tensor& t) const {
  if (t.tape() != this) throw StateError("grad: tensor is not tracked by this tape");
  const Node& n = nodes_[t.node()];
  if (n.grad.empty()) return std::vector<double>(n.size, 0.0);
  return n.grad;
}

std::vector<double> Tape::grad(const Parameter& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) return std::vector<double>(param.size(), 0.0);
  return grad(it->second);
}

bool Tape::watches(const Parameter& param) const { return params_.count(&param) != 0; }

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return record({m, n}, std::move(out), {&a, &b}, [a, b, m, k, n](std::span<const double> g, Tape& tape) {
    ConstMap gm(g.data(), m, n);
    if (a.tracked()) {
      std::vector<double> ga(m * k);
      Map(ga.data(), m, k).noalias() = gm * ConstMap(b.values().data(), k, n).transpose();
      tape.accumulate(a, std::move(ga));
    }
    if (b.tracked()) {
      std::vector<double> gb(k * n);
      Map(gb.data(), k, n).noalias() = ConstMap(a.values().data(), m, k).transpose() * gm;
      tape.accumulate(b, std::move(gb));
    }
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || bias.rank() != 1 || bias.dim(0) != w.dim(1)) {
    throw DimensionError("affine: incompatible shapes " + shape_string(x.shape()) + ", " + shape_string(w.shape()) +
                         ", " + shape_string(bias.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  std::vector<double> out(m * n);
  Map om(out.data(), m, n);
  om.noalias() = ConstMap(x.values().data(), m, k) * ConstMap(w.values().data(), k, n);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), n);
  return record({m, n}, std::move(out), {&x, &w, &bias}, [x, w, bias, m, k, n](std::span<const double> g, Tape& tape) {
    ConstMap gm(g.data(), m, n);
    if (x.tracked()) {
      std::vector<double> gx(m * k);
      Map(gx.data(), m, k).noalias() = gm * ConstMap(w.values().data(), k, n).transpose();
      tape.accumulate(x, std::move(gx));
    }
    if (w.tracked()) {
      std::vector<double> gw(k * n);
      Map(gw.data(), k, n).noalias() = ConstMap(x.values().data(), m, k).transpose() * gm;
      tape.accumulate(w, std::move(gw));
    }
    if (bias.tracked()) {
      std::vector<double> gb(n);
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), n) = gm.colwise().sum();
      tape.accumulate(bias, std::move(gb));
    }
  });
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record(a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const double> g, Tape& tape) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record(a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const double> g, Tape& tape) {
    tape.accumulate(a, g);
    if (b.tracked()) {
      std::vector<double> gb(g.begin(), g.end());
      for (double& v : gb) v = -v;
      tape.accumulate(b, std::move(gb));
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return record(a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const double> g, Tape& tape) {
    if (a.tracked()) {
      std::vector<double> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * b[i];
      tape.accumulate(a, std::move(ga));
    }
    if (b.tracked()) {
      std::vector<double> gb(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * a[i];
      tape.accumulate(b, std::move(gb));
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [a, factor](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(g.begin(), g.end());
    for (double& v : ga) v *= factor;
    tape.accumulate(a, std::move(ga));
  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; },
               [a](std::span<const double> g, Tape& tape) { tape.accumulate(a, g); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  auto y = std::make_shared<const std::vector<double>>(out);
  return record(a.shape(), std::move(out), {&a}, [a, y](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0 - (*y)[i] * (*y)[i]);
    tape.accumulate(a, std::move(ga));
  });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [a, slope](std::span<const double> g, Tape& tape) {
                 std::vector<double> ga(g.size());
                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] = a[i] > 0.0 ? g[i] : slope * g[i];
                 tape.accumulate(a, std::move(ga));
               });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  auto y = std::make_shared<const std::vector<double>>(out);
  return record(a.shape(), std::move(out), {&a}, [a, y](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (*y)[i];
    tape.accumulate(a, std::move(ga));
  });
}

Tensor log(const Tensor& a) {
  for (double x : a.values())
    if (!(x > 0.0)) throw DomainError("log: non-positive operand " + std::to_string(x));
  return unary(a, [](double x) { return std::log(x); }, [a](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / a[i];
    tape.accumulate(a, std::move(ga));
  });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [a](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = 2.0 * a[i] * g[i];
    tape.accumulate(a, std::move(ga));
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: empty interval");
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [a, lo, hi](std::span<const double> g, Tape& tape) {
                 std::vector<double> ga(g.size());
                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] = (a[i] > lo && a[i] < hi) ? g[i] : 0.0;
                 tape.accumulate(a, std::move(ga));
               });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  if (a.size() == 0) throw DomainError("sum: empty reduction");
  double s = 0.0;
  for (double x : a.values()) s += x;
  return record({}, {s}, {&a}, [a](std::span<const double> g, Tape& tape) {
    tape.accumulate(a, std::vector<double>(a.size(), g[0]));
  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "sum");
  if (a.dim(axis) == 0) throw DomainError("sum: empty reduction");
  const AxisView v = axis_view(a.shape(), axis);
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += a[(o * v.extent + e) * v.inner + i];
  return record(drop_axis(a.shape(), axis), std::move(out), {&a}, [a, v](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(a.size());
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t e = 0; e < v.extent; ++e)
        for (std::size_t i = 0; i < v.inner; ++i) ga[(o * v.extent + e) * v.inner + i] = g[o * v.inner + i];
    tape.accumulate(a, std::move(ga));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DomainError("mean: empty reduction");
  return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor mean(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "mean");
  if (a.dim(axis) == 0) throw DomainError("mean: empty reduction");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor var(const Tensor& a) {
  if (a.size() == 0) throw DomainError("var: empty reduction");
  const double n = static_cast<double>(a.size());
  double m = 0.0;
  for (double x : a.values()) m += x;
  m /= n;
  double s = 0.0;
  for (double x : a.values()) s += (x - m) * (x - m);
  return record({}, {s / n}, {&a}, [a, m, n](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(a.size());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[0] * 2.0 * (a[i] - m) / n;
    tape.accumulate(a, std::move(ga));
  });
}

Tensor var(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "var");
  if (a.dim(axis) == 0) throw DomainError("var: empty reduction");
  const AxisView v = axis_view(a.shape(), axis);
  const double n = static_cast<double>(v.extent);
  std::vector<double> means(v.outer * v.inner, 0.0), out(v.outer * v.inner, 0.0);
  auto idx = [v](std::size_t o, std::size_t e, std::size_t i) { return (o * v.extent + e) * v.inner + i; };
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i) means[o * v.inner + i] += a[idx(o, e, i)];
  for (double& m : means) m /= n;
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const double d = a[idx(o, e, i)] - means[o * v.inner + i];
        out[o * v.inner + i] += d * d;
      }
  for (double& s : out) s /= n;
  return record(drop_axis(a.shape(), axis), std::move(out), {&a},
                [a, v, n, means, idx](std::span<const double> g, Tape& tape) {
                  std::vector<double> ga(a.size());
                  for (std::size_t o = 0; o < v.outer; ++o)
                    for (std::size_t e = 0; e < v.extent; ++e)
                      for (std::size_t i = 0; i < v.inner; ++i) {
                        const std::size_t k = o * v.inner + i;
                        ga[idx(o, e, i)] = g[k] * 2.0 * (a[idx(o, e, i)] - means[k]) / n;
                      }
                  tape.accumulate(a, std::move(ga));
                });
}

// ---- structure -------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  const Tensor& first = parts.front();
  require_axis(first, axis, "concat");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != first.dim(d)) {
        throw DimensionError("concat: shapes " + shape_string(first.shape()) + " and " + shape_string(p.shape()) +
                             " disagree off the concat axis");
      }
    }
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape shape = first.shape();
  shape[axis] = total;
  const AxisView v = axis_view(shape, axis);
  std::vector<double> out(shape_size(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t ext = extents[p];
    auto src = parts[p].values();
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(src.begin() + o * ext * v.inner, ext * v.inner, out.begin() + (o * total + offset) * v.inner);
    offset += ext;
  }

  auto bw = [parts, extents, v, total](std::span<const double> g, Tape& t) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const std::size_t ext = extents[p];
      if (parts[p].tracked()) {
        std::vector<double> gp(parts[p].size());
        for (std::size_t o = 0; o < v.outer; ++o)
          std::copy_n(g.begin() + (o * total + off) * v.inner, ext * v.inner, gp.begin() + o * ext * v.inner);
        t.accumulate(parts[p], gp);
      }
      off += ext;
    }
  };
  std::vector<const Tensor*> operands;
  for (const Tensor& p : parts) operands.push_back(&p);
  return record(std::move(shape), std::move(out), operands, std::move(bw));
}

std::vector<Tensor> split_sizes(const Tensor& a, const std::vector<std::size_t>& sizes, std::size_t axis) {
  require_axis(a, axis, "split");
  std::size_t total = 0;
  for (std::size_t s : sizes) {
    if (s == 0) throw DimensionError("split: zero-sized part");
    total += s;
  }
  if (total != a.dim(axis)) {
    throw DimensionError("split: sizes sum to " + std::to_string(total) + " but axis " + std::to_string(axis) +
                         " of " + shape_string(a.shape()) + " has " + std::to_string(a.dim(axis)));
  }
  const AxisView v = axis_view(a.shape(), axis);
  std::vector<Tensor> out;
  std::size_t offset = 0;
  for (std::size_t ext : sizes) {
    Shape shape = a.shape();
    shape[axis] = ext;
    std::vector<double> part(shape_size(shape));
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(a.values().begin() + (o * v.extent + offset) * v.inner, ext * v.inner,
                  part.begin() + o * ext * v.inner);
    out.push_back(record(std::move(shape), std::move(part), {&a},
                         [a, v, offset, ext](std::span<const double> g, Tape& tape) {
                           std::vector<double> ga(a.size(), 0.0);
                           for (std::size_t o = 0; o < v.outer; ++o)
                             std::copy_n(g.begin() + o * ext * v.inner, ext * v.inner,
                                         ga.begin() + (o * v.extent + offset) * v.inner);
                           tape.accumulate(a, std::move(ga));
                         }));
    offset += ext;
  }
  return out;
}

std::vector<Tensor> split(const Tensor& a, std::size_t parts, std::size_t axis) {
  require_axis(a, axis, "split");
  if (parts == 0 || a.dim(axis) % parts != 0) {
    throw DimensionError("split: axis " + std::to_string(axis) + " of " + shape_string(a.shape()) +
                         " does not divide into " + std::to_string(parts) + " equal parts");
  }
  return split_sizes(a, std::vector<std::size_t>(parts, a.dim(axis) / parts), axis);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return record(std::move(shape), std::move(out), {&a},
                [a](std::span<const double> g, Tape& tape) { tape.accumulate(a, g); });
}

Tensor broadcast_rows(const Tensor& row, std::size_t rows) {
  if (row.rank() != 1) throw DimensionError("broadcast_rows: expected a vector, got " + shape_string(row.shape()));
  const std::size_t n = row.dim(0);
  std::vector<double> out(rows * n);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(row.values().begin(), n, out.begin() + r * n);
  return record({rows, n}, std::move(out), {&row}, [row, rows, n](std::span<const double> g, Tape& tape) {
    std::vector<double> gr(n, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) gr[j] += g[r * n + j];
    tape.accumulate(row, gr);
  });
}

Tensor broadcast_cols(const Tensor& col, std::size_t cols) {
  if (col.rank() != 1) throw DimensionError("broadcast_cols: expected a vector, got " + shape_string(col.shape()));
  const std::size_t m = col.dim(0);
  std::vector<double> out(m * cols);
  for (std::size_t r = 0; r < m; ++r) std::fill_n(out.begin() + r * cols, cols, col[r]);
  return record({m, cols}, std::move(out), {&col}, [col, m, cols](std::span<const double> g, Tape& tape) {
    std::vector<double> gc(m, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < cols; ++j) gc[r] += g[r * cols + j];
    tape.accumulate(col, gc);
  });
}

Tensor broadcast_scalar(const Tensor& s, Shape shape) {
  const double value = s.item();
  std::vector<double> out(shape_size(shape), value);
  return record(std::move(shape), std::move(out), {&s}, [s](std::span<const double> g, Tape& tape) {
    double total = 0.0;
    for (double v : g) total += v;
    tape.accumulate(s, std::vector<double>(s.size(), total));
  });
}

Tensor gather_cols(const Tensor& a, const std::vector<std::size_t>& index) {
  if (a.rank() != 2) throw DimensionError("gather_cols: expected a matrix, got " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1), k = index.size();
  for (std::size_t j : index)
    if (j >= n) throw DimensionError("gather_cols: column index out of range");
  std::vector<double> out(m * k);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = a[r * n + index[j]];
  return record({m, k}, std::move(out), {&a}, [a, index, m, n, k](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(a.size(), 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < k; ++j) ga[r * n + index[j]] += g[r * k + j];
    tape.accumulate(a, std::move(ga));
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  if (a.rank() != 2) throw DimensionError("gather_rows: expected a matrix, got " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1), k = index.size();
  if (k == 0) throw DimensionError("gather_rows: empty index");
  for (std::size_t i : index)
    if (i >= m) throw DimensionError("gather_rows: row index out of range");
  std::vector<double> out(k * n);
  for (std::size_t r = 0; r < k; ++r) std::copy_n(a.values().begin() + index[r] * n, n, out.begin() + r * n);
  return record({k, n}, std::move(out), {&a}, [a, index, n, k](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(a.size(), 0.0);
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t j = 0; j < n; ++j) ga[index[r] * n + j] += g[r * n + j];
    tape.accumulate(a, std::move(ga));
  });
}

Tensor log_softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("log_softmax: expected a matrix, got " + shape_string(logits.shape()));
  const std::size_t m = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(m * k);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = logits.values().data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = row[j] - lse;
  }
  auto y = std::make_shared<const std::vector<double>>(out);
  return record({m, k}, std::move(out), {&logits}, [logits, y, m, k](std::span<const double> g, Tape& tape) {
    std::vector<double> ga(m * k);
    for (std::size_t r = 0; r < m; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < k; ++j) gs += g[r * k + j];
      for (std::size_t j = 0; j < k; ++j) ga[r * k + j] = g[r * k + j] - std::exp((*y)[r * k + j]) * gs;
    }
    tape.accumulate(logits, std::move(ga));
  });
}

}  // namespace invlens
