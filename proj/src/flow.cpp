#include "invlens/flow.hpp"

#include <cmath>
#include <numbers>

#include "invlens/checkpoint.hpp"
#include "invlens/log.hpp"

namespace invlens {

// ---- ActNorm ---------------------------------------------------------------

ActNorm::ActNorm(const std::string& name, std::size_t dim)
    : log_scale(name + ".log_scale", {dim}, std::vector<double>(dim, 0.0)),
      shift(name + ".shift", {dim}, std::vector<double>(dim, 0.0)) {}

void ActNorm::initialize(const Tensor& batch) {
  const std::size_t d = log_scale.size();
  if (batch.rank() != 2 || batch.dim(1) != d)
    throw DimensionError("actnorm init: expected [b x " + std::to_string(d) + "], got " + shape_string(batch.shape()));
  if (batch.dim(0) < 2) throw DomainError("actnorm init: batch needs at least 2 rows");
  Tensor m = mean(batch, 0);
  Tensor v = var(batch, 0);
  for (std::size_t j = 0; j < d; ++j) {
    double vj = v[j];
    if (vj < kVarianceFloor) {
      warn(log_scale.name + ": coordinate " + std::to_string(j) + " has variance " + std::to_string(vj) +
           " on the init batch; adding " + std::to_string(kVarianceFloor));
      vj += kVarianceFloor;
    }
    const double inv_std = 1.0 / std::sqrt(vj);
    (*log_scale.value)[j] = std::log(inv_std);
    (*shift.value)[j] = -m[j] * inv_std;
  }
  initialized_ = true;
}

void ActNorm::set_identity() {
  std::fill(log_scale.value->begin(), log_scale.value->end(), 0.0);
  std::fill(shift.value->begin(), shift.value->end(), 0.0);
  initialized_ = true;
}

Tensor ActNorm::forward(const Tensor& x, Tape* tape) const {
  const std::size_t b = x.dim(0);
  return x * broadcast_rows(exp(bind(log_scale, tape)), b) + broadcast_rows(bind(shift, tape), b);
}

Tensor ActNorm::inverse(const Tensor& y, Tape* tape) const {
  const std::size_t b = y.dim(0);
  return (y - broadcast_rows(bind(shift, tape), b)) * broadcast_rows(exp(-bind(log_scale, tape)), b);
}

Tensor ActNorm::logdet(std::size_t batch, Tape* tape) const {
  return broadcast_scalar(sum(bind(log_scale, tape)), {batch});
}

// ---- Shuffle ---------------------------------------------------------------

Shuffle::Shuffle(std::size_t dim, Rng& rng, bool enabled) {
  if (enabled) {
    perm_ = rng.permutation(dim);
  } else {
    perm_.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) perm_[i] = i;
  }
  inv_perm_.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) inv_perm_[perm_[i]] = i;
}

Shuffle::Shuffle(std::vector<std::size_t> perm) : perm_(std::move(perm)) {
  inv_perm_.assign(perm_.size(), perm_.size());
  for (std::size_t i = 0; i < perm_.size(); ++i) {
    if (perm_[i] >= perm_.size() || inv_perm_[perm_[i]] != perm_.size())
      throw DomainError("shuffle: not a permutation");
    inv_perm_[perm_[i]] = i;
  }
}

// ---- AffineCoupling --------------------------------------------------------

AffineCoupling::AffineCoupling(const std::string& name, const FlowConfig& config, Rng& rng)
    : half_(config.dim / 2), cond_width_(config.cond_width), clamp_(config.clamp) {
  if (config.dim < 2 || config.dim % 2 != 0)
    throw DimensionError("coupling: dimension must be even, got " + std::to_string(config.dim));
  std::vector<std::size_t> widths{half_ + cond_width_};
  for (std::size_t i = 0; i < config.hidden_depth; ++i) widths.push_back(config.hidden_width);
  widths.push_back(half_);
  const char* names[4] = {"s1", "t1", "s2", "t2"};
  for (int i = 0; i < 4; ++i) nets_[i] = Mlp(name + "." + names[i], widths, rng, Init::kZero);
}

Tensor AffineCoupling::subnet_input(const Tensor& half, const std::optional<Tensor>& h) const {
  if (cond_width_ == 0) return half;
  return concat({half, *h}, 1);
}

Tensor AffineCoupling::log_scale(const Mlp& net, const Tensor& in, Tape* tape) const {
  return scale(tanh(net.forward(in, tape)), clamp_);
}

FlowOutput AffineCoupling::forward(const Tensor& x, const std::optional<Tensor>& h, Tape* tape) const {
  auto halves = split(x, 2, 1);
  const Tensor& x1 = halves[0];
  const Tensor& x2 = halves[1];

  Tensor in2 = subnet_input(x2, h);
  Tensor a1 = log_scale(nets_[0], in2, tape);
  Tensor y1 = x1 * exp(a1) + nets_[1].forward(in2, tape);

  Tensor in1 = subnet_input(y1, h);
  Tensor a2 = log_scale(nets_[2], in1, tape);
  Tensor y2 = x2 * exp(a2) + nets_[3].forward(in1, tape);

  return {concat({y1, y2}, 1), sum(a1, 1) + sum(a2, 1)};
}

Tensor AffineCoupling::inverse(const Tensor& y, const std::optional<Tensor>& h, Tape* tape) const {
  auto halves = split(y, 2, 1);
  const Tensor& y1 = halves[0];
  const Tensor& y2 = halves[1];

  Tensor in1 = subnet_input(y1, h);
  Tensor x2 = (y2 - nets_[3].forward(in1, tape)) * exp(-log_scale(nets_[2], in1, tape));

  Tensor in2 = subnet_input(x2, h);
  Tensor x1 = (y1 - nets_[1].forward(in2, tape)) * exp(-log_scale(nets_[0], in2, tape));

  return concat({x1, x2}, 1);
}

std::vector<Parameter*> AffineCoupling::parameters() {
  std::vector<Parameter*> out;
  for (Mlp& n : nets_) append_parameters(out, n);
  return out;
}

std::vector<const Parameter*> AffineCoupling::parameters() const {
  std::vector<const Parameter*> out;
  for (const Mlp& n : nets_)
    for (const Parameter* p : n.parameters()) out.push_back(p);
  return out;
}

// ---- FlowStack -------------------------------------------------------------

FlowStack::FlowStack(const std::string& name, const FlowConfig& config, Rng& rng) : name_(name), config_(config) {
  for (std::size_t i = 0; i < config.blocks; ++i) {
    const std::string prefix = name + ".b" + std::to_string(i);
    FlowBlock block;
    block.actnorm = ActNorm(prefix + ".actnorm", config.dim);
    block.shuffle = Shuffle(config.dim, rng, config.shuffle);
    block.coupling = AffineCoupling(prefix + ".coupling", config, rng);
    blocks_.push_back(std::move(block));
  }
}

void FlowStack::check_input(const Tensor& x, const std::optional<Tensor>& h) const {
  if (x.rank() != 2 || x.dim(1) != config_.dim)
    throw DimensionError(name_ + ": expected [b x " + std::to_string(config_.dim) + "], got " +
                         shape_string(x.shape()));
  if (config_.cond_width > 0) {
    if (!h) throw DimensionError(name_ + ": conditional stack called without conditioning");
    if (h->rank() != 2 || h->dim(0) != x.dim(0) || h->dim(1) != config_.cond_width)
      throw DimensionError(name_ + ": conditioning " + shape_string(h->shape()) + " does not match batch " +
                           std::to_string(x.dim(0)) + " x width " + std::to_string(config_.cond_width));
  } else if (h) {
    throw DimensionError(name_ + ": unconditional stack given a conditioning input");
  }
}

FlowOutput FlowStack::forward(const Tensor& x, const std::optional<Tensor>& h, Tape* tape) const {
  check_input(x, h);
  if (!initialized()) throw StateError(name_ + ": actnorm layers are not initialized");
  const std::size_t b = x.dim(0);
  Tensor y = x;
  Tensor logdet = Tensor::zeros({b});
  for (const FlowBlock& block : blocks_) {
    y = block.actnorm.forward(y, tape);
    logdet = logdet + block.actnorm.logdet(b, tape);
    y = block.shuffle.forward(y);
    FlowOutput c = block.coupling.forward(y, h, tape);
    y = c.y;
    logdet = logdet + c.logdet;
  }
  return {y, logdet};
}

Tensor FlowStack::inverse(const Tensor& y, const std::optional<Tensor>& h, Tape* tape) const {
  check_input(y, h);
  if (!initialized()) throw StateError(name_ + ": actnorm layers are not initialized");
  Tensor x = y;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    x = it->coupling.inverse(x, h, tape);
    x = it->shuffle.inverse(x);
    x = it->actnorm.inverse(x, tape);
  }
  return x;
}

void FlowStack::initialize(const Tensor& batch, const std::optional<Tensor>& h) {
  check_input(batch, h);
  Tensor y = batch.detach();
  for (FlowBlock& block : blocks_) {
    block.actnorm.initialize(y);
    y = block.actnorm.forward(y, nullptr);
    y = block.shuffle.forward(y);
    y = block.coupling.forward(y, h, nullptr).y;
  }
}

void FlowStack::set_identity() {
  for (FlowBlock& block : blocks_) block.actnorm.set_identity();
}

bool FlowStack::initialized() const {
  for (const FlowBlock& block : blocks_)
    if (!block.actnorm.initialized()) return false;
  return true;
}

std::vector<Parameter*> FlowStack::parameters() {
  std::vector<Parameter*> out;
  for (FlowBlock& block : blocks_) {
    out.push_back(&block.actnorm.log_scale);
    out.push_back(&block.actnorm.shift);
    for (Parameter* p : block.coupling.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> FlowStack::parameters() const {
  std::vector<const Parameter*> out;
  for (const FlowBlock& block : blocks_) {
    out.push_back(&block.actnorm.log_scale);
    out.push_back(&block.actnorm.shift);
    for (const Parameter* p : block.coupling.parameters()) out.push_back(p);
  }
  return out;
}

void FlowStack::save(Checkpoint& ckpt) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = name_ + ".b" + std::to_string(i);
    const FlowBlock& block = blocks_[i];
    ckpt.put(prefix + ".actnorm.initialized", {1}, {block.actnorm.initialized() ? 1.0 : 0.0});
    const auto& perm = block.shuffle.perm();
    ckpt.put(prefix + ".shuffle.perm", {perm.size()}, std::vector<double>(perm.begin(), perm.end()));
  }
  save_parameters(ckpt, parameters());
}

void FlowStack::load(const Checkpoint& ckpt) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = name_ + ".b" + std::to_string(i);
    FlowBlock& block = blocks_[i];
    block.actnorm.initialized_ = ckpt.get(prefix + ".actnorm.initialized").values.at(0) != 0.0;
    const auto& p = ckpt.get(prefix + ".shuffle.perm").values;
    if (p.size() != config_.dim) throw FormatError(prefix + ".shuffle.perm has the wrong length");
    block.shuffle = Shuffle(std::vector<std::size_t>(p.begin(), p.end()));
  }
  load_parameters(ckpt, parameters());
}

// ---- ConditionEmbedding ----------------------------------------------------

ConditionEmbedding::ConditionEmbedding(const std::string& name, std::size_t in_dim, std::size_t hidden,
                                       std::size_t out_dim, Rng& rng)
    : name_(name), mean_(in_dim, 0.0), inv_std_(in_dim, 1.0), net_(name + ".net", {in_dim, hidden, out_dim}, rng) {}

void ConditionEmbedding::initialize(const Tensor& representations) {
  if (representations.rank() != 2 || representations.dim(1) != in_dim())
    throw DimensionError(name_ + ": representation batch " + shape_string(representations.shape()) +
                         " does not match width " + std::to_string(in_dim()));
  Tensor m = mean(representations, 0);
  Tensor v = var(representations, 0);
  for (std::size_t j = 0; j < in_dim(); ++j) {
    mean_[j] = m[j];
    inv_std_[j] = 1.0 / std::sqrt(v[j] + 1e-6);
  }
}

Tensor ConditionEmbedding::forward(const Tensor& z, Tape* tape) const {
  if (z.rank() != 2 || z.dim(1) != in_dim())
    throw DimensionError(name_ + ": expected [b x " + std::to_string(in_dim()) + "], got " + shape_string(z.shape()));
  const std::size_t b = z.dim(0);
  Tensor standardized = (z - broadcast_rows(Tensor::vector(mean_), b)) * broadcast_rows(Tensor::vector(inv_std_), b);
  return net_.forward(standardized, tape);
}

void ConditionEmbedding::save(Checkpoint& ckpt) const {
  ckpt.put(name_ + ".standardize.mean", {mean_.size()}, mean_);
  ckpt.put(name_ + ".standardize.inv_std", {inv_std_.size()}, inv_std_);
  save_parameters(ckpt, parameters());
}

void ConditionEmbedding::load(const Checkpoint& ckpt) {
  const auto& m = ckpt.get(name_ + ".standardize.mean").values;
  const auto& s = ckpt.get(name_ + ".standardize.inv_std").values;
  if (m.size() != in_dim() || s.size() != in_dim()) throw FormatError(name_ + ": standardization width mismatch");
  mean_ = m;
  inv_std_ = s;
  load_parameters(ckpt, parameters());
}

Tensor gaussian_nll(const FlowOutput& out) {
  const double d = static_cast<double>(out.y.dim(1));
  const double constant = 0.5 * d * std::log(2.0 * std::numbers::pi);
  return add_scalar(scale(sum(square(out.y), 1), 0.5), constant) - out.logdet;
}

}  // namespace invlens
