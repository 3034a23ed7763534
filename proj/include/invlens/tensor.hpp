#pragma once

// Dense float64 tensors with reverse-mode differentiation.
//
// A Tensor is an immutable view onto a shared row-major buffer. Every op
// allocates a fresh buffer, so no op ever writes into its inputs. When at
// least one operand is tracked by a Tape, the result is appended to the same
// tape together with a backward rule; otherwise the op is evaluated eagerly
// and nothing is recorded.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace invlens {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

class Tape;
struct Parameter;

class Tensor {
 public:
  Tensor();  // scalar zero
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }
  std::span<const double> values() const { return {data_->data(), data_->size()}; }
  const std::shared_ptr<const std::vector<double>>& buffer() const { return data_; }

  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  // Same values, no tape.
  Tensor detach() const;

 private:
  friend class Tape;
  friend Tensor record(Shape, std::vector<double>, const std::vector<const Tensor*>&,
                       std::function<void(std::span<const double>, Tape&)>);

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

// Appends a result to the tape shared by the tracked parents (if any).
// The backward rule receives d(root)/d(result) and accumulates into parents
// through Tape::accumulate.
Tensor record(Shape shape, std::vector<double> values, const std::vector<const Tensor*>& parents,
              std::function<void(std::span<const double>, Tape&)> backward);

class Tape {
 public:
  using Backward = std::function<void(std::span<const double>, Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Starts tracking a constant; gradients with respect to it can be read
  // back with grad() after backward().
  Tensor leaf(const Tensor& value);
  // Tracks a parameter. Repeated calls return the same leaf.
  Tensor watch(const Parameter& param);

  // Seeds d(root)/d(root) = 1 (root must hold a single value) and runs the
  // recorded rules from the root back to the first node.
  void backward(const Tensor& root);
  void backward(const Tensor& root, std::span<const double> seed);

  void accumulate(const Tensor& target, std::span<const double> grad);
  void accumulate(const Tensor& target, std::vector<double>&& grad);

  // Gradient of the last backward() root with respect to a tracked tensor;
  // zeros when no path reached it.
  std::vector<double> grad(const Tensor& t) const;
  std::vector<double> grad(const Parameter& param) const;
  bool watches(const Parameter& param) const;
  // Borrowed view of a parameter's gradient; empty when no path reached it.
  std::span<const double> grad_view(const Parameter& param) const;

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::size_t>& parents(std::size_t node) const { return nodes_.at(node).parents; }
  // Number of backward rules executed by the last backward().
  std::size_t visited() const { return visited_; }

 private:
  friend Tensor record(Shape, std::vector<double>, const std::vector<const Tensor*>&,
                       std::function<void(std::span<const double>, Tape&)>);

  struct Node {
    std::size_t size = 0;
    std::vector<std::size_t> parents;
    Backward backward;
    std::vector<double> grad;
  };

  Tensor append(Shape shape, std::shared_ptr<const std::vector<double>> data,
                std::vector<std::size_t> parents, Backward backward);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, Tensor> params_;
  std::size_t visited_ = 0;
};

// A named, trainable array. The value buffer is shared with the tensors that
// view it, so optimizer steps are visible to later forward passes.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Shape shape, std::vector<double> values);
  // Copies own their values; a copied model never aliases the original.
  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<double>> value;

  Tensor tensor() const { return Tensor(shape, std::shared_ptr<const std::vector<double>>(value)); }
  std::size_t size() const { return value->size(); }
};

// Parameter as a tensor: tracked when a tape is given, a plain view otherwise.
inline Tensor bind(const Parameter& p, Tape* tape) { return tape ? tape->watch(p) : p.tensor(); }

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// x[b x in] * w[in x out] + bias[out], fused.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);

Tensor tanh(const Tensor& a);
inline constexpr double kLeakySlope = 0.01;
Tensor leaky_relu(const Tensor& a, double slope = kLeakySlope);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
// Gradient passes only where lo < a < hi.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);
// Biased (1/N) variance.
Tensor var(const Tensor& a);
Tensor var(const Tensor& a, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
std::vector<Tensor> split(const Tensor& a, std::size_t parts, std::size_t axis);
std::vector<Tensor> split_sizes(const Tensor& a, const std::vector<std::size_t>& sizes, std::size_t axis);

Tensor reshape(const Tensor& a, Shape shape);
// [n] -> [rows x n]
Tensor broadcast_rows(const Tensor& row, std::size_t rows);
// [rows] -> [rows x cols]
Tensor broadcast_cols(const Tensor& col, std::size_t cols);
// single value -> shape
Tensor broadcast_scalar(const Tensor& s, Shape shape);
// out[:, j] = a[:, index[j]]
Tensor gather_cols(const Tensor& a, const std::vector<std::size_t>& index);
// out[i, :] = a[index[i], :]
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index);
// Row-wise log-softmax of a [rows x k] matrix.
Tensor log_softmax(const Tensor& logits);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace invlens
