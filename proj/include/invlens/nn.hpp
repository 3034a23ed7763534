#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "invlens/rng.hpp"
#include "invlens/tensor.hpp"

namespace invlens {

class Checkpoint;

enum class Init { kHe, kZero };

struct Dense {
  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng, Init init = Init::kHe);

  Tensor forward(const Tensor& x, Tape* tape) const;
  std::size_t in_dim() const { return weight.shape[0]; }
  std::size_t out_dim() const { return weight.shape[1]; }

  Parameter weight;  // [in x out]
  Parameter bias;    // [out]
};

enum class Activation { kNone, kLeakyRelu, kTanh };

Tensor activate(const Tensor& x, Activation act);

// Dense layers with leaky-ReLU between them. `widths` lists every layer
// boundary, input first: {in, hidden..., out}.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng, Init last_init = Init::kHe,
      Activation output = Activation::kNone);

  Tensor forward(const Tensor& x, Tape* tape) const;
  // Post-activation output of every layer; the last entry equals forward().
  std::vector<Tensor> forward_all(const Tensor& x, Tape* tape) const;

  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  const std::vector<Dense>& layers() const { return layers_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  std::vector<Dense> layers_;
  Activation output_ = Activation::kNone;
};

void append_parameters(std::vector<Parameter*>& out, Mlp& mlp);

void save_parameters(Checkpoint& ckpt, const std::vector<const Parameter*>& params);
void load_parameters(const Checkpoint& ckpt, const std::vector<Parameter*>& params);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  // Applies one update from the gradients recorded on `tape`. Returns the
  // pre-clip global gradient norm.
  double step(const Tape& tape);
  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace invlens
