#pragma once

// Invertible layers and their composition.
//
// One invertible block is ActNorm -> Shuffle -> AffineCoupling. A FlowStack
// chains blocks and returns the exact log|det J| of the whole map per
// example. Conditional stacks receive an embedding h of the conditioning
// representation; h is concatenated to the input of every coupling subnet.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "invlens/nn.hpp"
#include "invlens/rng.hpp"
#include "invlens/tensor.hpp"

namespace invlens {

class Checkpoint;

struct FlowConfig {
  std::size_t dim = 64;
  std::size_t blocks = 12;
  std::size_t hidden_width = 512;
  std::size_t hidden_depth = 2;
  // Log-scales are c * tanh(raw), so every coupling scale lies in [e^-c, e^c].
  double clamp = 2.0;
  // Width of the conditioning embedding; 0 for an unconditional stack.
  std::size_t cond_width = 0;
  bool shuffle = true;
};

struct FlowOutput {
  Tensor y;       // [b x d]
  Tensor logdet;  // [b]
};

class ActNorm {
 public:
  static constexpr double kVarianceFloor = 1e-6;

  ActNorm() = default;
  ActNorm(const std::string& name, std::size_t dim);

  // Sets shift/scale so `batch` maps to zero mean and unit variance per
  // coordinate. Coordinates with variance below the floor get the floor
  // added and raise a warning.
  void initialize(const Tensor& batch);
  void set_identity();
  bool initialized() const { return initialized_; }

  Tensor forward(const Tensor& x, Tape* tape) const;
  Tensor inverse(const Tensor& y, Tape* tape) const;
  // Per-example log-determinant (identical for every row).
  Tensor logdet(std::size_t batch, Tape* tape) const;

  Parameter log_scale;
  Parameter shift;

 private:
  friend class FlowStack;
  bool initialized_ = false;
};

class Shuffle {
 public:
  Shuffle() = default;
  Shuffle(std::size_t dim, Rng& rng, bool enabled);
  explicit Shuffle(std::vector<std::size_t> perm);

  Tensor forward(const Tensor& x) const { return gather_cols(x, perm_); }
  Tensor inverse(const Tensor& y) const { return gather_cols(y, inv_perm_); }
  const std::vector<std::size_t>& perm() const { return perm_; }
  const std::vector<std::size_t>& inv_perm() const { return inv_perm_; }

 private:
  std::vector<std::size_t> perm_, inv_perm_;
};

// Two-stage affine coupling on x = (x1, x2):
//   y1 = x1 * s1(x2, h) + t1(x2, h)
//   y2 = x2 * s2(y1, h) + t2(y1, h)
// with s = exp(c * tanh(raw)). Final subnet layers start at zero, so a fresh
// coupling is the identity.
class AffineCoupling {
 public:
  AffineCoupling() = default;
  AffineCoupling(const std::string& name, const FlowConfig& config, Rng& rng);

  FlowOutput forward(const Tensor& x, const std::optional<Tensor>& h, Tape* tape) const;
  Tensor inverse(const Tensor& y, const std::optional<Tensor>& h, Tape* tape) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Mlp& subnet(std::size_t i) { return nets_[i]; }

 private:
  Tensor subnet_input(const Tensor& half, const std::optional<Tensor>& h) const;
  Tensor log_scale(const Mlp& net, const Tensor& in, Tape* tape) const;

  std::size_t half_ = 0;
  std::size_t cond_width_ = 0;
  double clamp_ = 2.0;
  Mlp nets_[4];  // s1, t1, s2, t2
};

struct FlowBlock {
  ActNorm actnorm;
  Shuffle shuffle;
  AffineCoupling coupling;
};

class FlowStack {
 public:
  FlowStack() = default;
  FlowStack(const std::string& name, const FlowConfig& config, Rng& rng);

  // Throws StateError if any actnorm is uninitialized.
  FlowOutput forward(const Tensor& x, const std::optional<Tensor>& h, Tape* tape) const;
  Tensor inverse(const Tensor& y, const std::optional<Tensor>& h, Tape* tape) const;

  // Data-dependent actnorm initialization: blocks are run in order on the
  // batch, each actnorm initialized from the activations reaching it.
  void initialize(const Tensor& batch, const std::optional<Tensor>& h);
  void set_identity();
  bool initialized() const;

  const FlowConfig& config() const { return config_; }
  std::vector<FlowBlock>& blocks() { return blocks_; }
  const std::vector<FlowBlock>& blocks() const { return blocks_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  void check_input(const Tensor& x, const std::optional<Tensor>& h) const;

  std::string name_;
  FlowConfig config_;
  std::vector<FlowBlock> blocks_;
};

// h = H(z): standardizes the representation with statistics fixed at
// initialization, then applies a small MLP.
class ConditionEmbedding {
 public:
  ConditionEmbedding() = default;
  ConditionEmbedding(const std::string& name, std::size_t in_dim, std::size_t hidden, std::size_t out_dim, Rng& rng);

  void initialize(const Tensor& representations);
  Tensor forward(const Tensor& z, Tape* tape) const;

  std::size_t in_dim() const { return mean_.size(); }
  std::size_t out_dim() const { return net_.out_dim(); }
  std::vector<Parameter*> parameters() { return net_.parameters(); }
  std::vector<const Parameter*> parameters() const { return net_.parameters(); }

  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  std::string name_;
  std::vector<double> mean_, inv_std_;
  Mlp net_;
};

// Per-example Gaussian NLL of a flow output:
//   0.5 * |y|^2 + (d/2) log(2 pi) - logdet
Tensor gaussian_nll(const FlowOutput& out);

}  // namespace invlens
