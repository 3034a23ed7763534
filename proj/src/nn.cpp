#include "invlens/nn.hpp"

#include <cmath>

#include "invlens/checkpoint.hpp"

namespace invlens {

Dense::Dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng, Init init) {
  std::vector<double> w(in * out, 0.0);
  if (init == Init::kHe) {
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    for (double& x : w) x = std * rng.normal();
  }
  weight = Parameter(name + ".weight", {in, out}, std::move(w));
  bias = Parameter(name + ".bias", {out}, std::vector<double>(out, 0.0));
}

Tensor Dense::forward(const Tensor& x, Tape* tape) const { return affine(x, bind(weight, tape), bind(bias, tape)); }

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::kLeakyRelu:
      return leaky_relu(x);
    case Activation::kTanh:
      return tanh(x);
    case Activation::kNone:
      break;
  }
  return x;
}

Mlp::Mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng, Init last_init,
         Activation output)
    : output_(output) {
  if (widths.size() < 2) throw DimensionError("mlp " + name + ": needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.emplace_back(name + ".l" + std::to_string(i), widths[i], widths[i + 1], rng, last ? last_init : Init::kHe);
  }
}

std::vector<Tensor> Mlp::forward_all(const Tensor& x, Tape* tape) const {
  std::vector<Tensor> outs;
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h, tape);
    h = activate(h, i + 1 == layers_.size() ? output_ : Activation::kLeakyRelu);
    outs.push_back(h);
  }
  return outs;
}

Tensor Mlp::forward(const Tensor& x, Tape* tape) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h, tape);
    h = activate(h, i + 1 == layers_.size() ? output_ : Activation::kLeakyRelu);
  }
  return h;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (Dense& d : layers_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
  std::vector<const Parameter*> out;
  for (const Dense& d : layers_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

void append_parameters(std::vector<Parameter*>& out, Mlp& mlp) {
  for (Parameter* p : mlp.parameters()) out.push_back(p);
}

void save_parameters(Checkpoint& ckpt, const std::vector<const Parameter*>& params) {
  for (const Parameter* p : params) ckpt.put(p->name, p->shape, *p->value);
}

void load_parameters(const Checkpoint& ckpt, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    const CheckpointEntry& e = ckpt.get(p->name);
    if (e.shape != p->shape) {
      throw FormatError("checkpoint entry " + p->name + " has shape " + shape_string(e.shape) + ", expected " +
                        shape_string(p->shape));
    }
    *p->value = e.values;
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

double Adam::step(const Tape& tape) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params_.size());
  double sq = 0.0;
  for (const Parameter* p : params_) {
    grads.push_back(tape.grad_view(*p));
    for (double g : grads.back()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double factor = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    std::vector<double>& w = *params_[k]->value;
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    const std::span<const double> g = grads[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i] * factor;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
  return norm;
}

}  // namespace invlens
