#include "invlens/sinn.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "invlens/checkpoint.hpp"
#include "invlens/cinn.hpp"
#include "invlens/meta.hpp"

namespace invlens {

FactorLayout::FactorLayout(std::size_t total, const std::vector<std::size_t>& concept_dims) : total_(total) {
  const std::size_t used = std::accumulate(concept_dims.begin(), concept_dims.end(), std::size_t{0});
  if (used >= total) throw DomainError("FactorLayout: concept factors leave no residual dimensions");
  for (std::size_t d : concept_dims)
    if (d == 0) throw DomainError("FactorLayout: empty concept factor");
  dims_.push_back(total - used);
  dims_.insert(dims_.end(), concept_dims.begin(), concept_dims.end());
}

std::size_t FactorLayout::begin(std::size_t i) const {
  if (i >= dims_.size()) throw DomainError("FactorLayout: factor " + std::to_string(i) + " out of range");
  std::size_t b = 0;
  for (std::size_t k = 0; k < i; ++k) b += dims_[k];
  return b;
}

std::size_t factor_index(Concept c) {
  switch (c) {
    case Concept::kClass:
      return 1;
    case Concept::kFg:
      return 2;
    case Concept::kBg:
      return 3;
  }
  return 0;
}

namespace {

FlowConfig flow_config(const SemanticConfig& c) {
  FlowConfig f;
  f.dim = c.latent;
  f.blocks = c.blocks;
  f.hidden_width = c.hidden_width;
  f.hidden_depth = c.hidden_depth;
  f.clamp = c.clamp;
  f.cond_width = 0;
  f.shuffle = c.shuffle;
  return f;
}

}  // namespace

SemanticModel::SemanticModel(const SemanticConfig& config, Rng& rng)
    : config_(config), layout_(config.latent, config.concept_dims), flow_("sinn.flow", flow_config(config), rng) {
  if (!(config.rho > 0.0 && config.rho < 1.0)) throw DomainError("SemanticModel: rho must lie in (0, 1)");
}

std::vector<Tensor> SemanticModel::factorize(const Tensor& zbar, Tape* tape) const {
  return split_sizes(forward(zbar, tape).y, layout_.dims(), 1);
}

Tensor SemanticModel::defactorize(const std::vector<Tensor>& factors, Tape* tape) const {
  if (factors.size() != layout_.count()) throw DimensionError("defactorize: wrong number of factors");
  return flow_.inverse(concat(factors, 1), std::nullopt, tape);
}

void SemanticModel::save(Checkpoint& ckpt) const {
  ckpt.set_meta("sinn.latent", std::to_string(config_.latent));
  ckpt.set_meta("sinn.concept_dims", join_sizes(config_.concept_dims));
  ckpt.set_meta("sinn.rho", format_double(config_.rho));
  ckpt.set_meta("sinn.blocks", std::to_string(config_.blocks));
  ckpt.set_meta("sinn.hidden_width", std::to_string(config_.hidden_width));
  ckpt.set_meta("sinn.hidden_depth", std::to_string(config_.hidden_depth));
  ckpt.set_meta("sinn.clamp", format_double(config_.clamp));
  ckpt.set_meta("sinn.shuffle", config_.shuffle ? "1" : "0");
  flow_.save(ckpt);
}

SemanticModel SemanticModel::load(const Checkpoint& ckpt) {
  if (!ckpt.has_meta("sinn.latent")) throw FormatError("checkpoint does not hold a semantic model");
  SemanticConfig c;
  c.latent = static_cast<std::size_t>(ckpt.meta_number("sinn.latent"));
  c.concept_dims = parse_sizes(ckpt.meta("sinn.concept_dims"));
  c.rho = ckpt.meta_number("sinn.rho");
  c.blocks = static_cast<std::size_t>(ckpt.meta_number("sinn.blocks"));
  c.hidden_width = static_cast<std::size_t>(ckpt.meta_number("sinn.hidden_width"));
  c.hidden_depth = static_cast<std::size_t>(ckpt.meta_number("sinn.hidden_depth"));
  c.clamp = ckpt.meta_number("sinn.clamp");
  c.shuffle = ckpt.meta("sinn.shuffle") == "1";
  Rng rng(0);
  SemanticModel m(c, rng);
  m.flow_.load(ckpt);
  return m;
}

Tensor pair_nll(const SemanticModel& model, const Tensor& zbar_a, const Tensor& zbar_b, std::size_t factor,
                Tape* tape) {
  const FactorLayout& layout = model.layout();
  if (factor == 0 || factor >= layout.count())
    throw DomainError("pair_nll: factor must name a concept (1.." + std::to_string(layout.count() - 1) + ")");
  if (zbar_a.shape() != zbar_b.shape()) throw DimensionError("pair_nll: pair halves differ in shape");
  const FlowOutput fa = model.forward(zbar_a, tape);
  const FlowOutput fb = model.forward(zbar_b, tape);
  const std::size_t b = zbar_a.dim(0), n = layout.total();
  const double rho = model.rho();

  std::vector<double> in(b * n, 0.0), out(b * n, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t k = 0; k < n; ++k) {
      const bool shared = k >= layout.begin(factor) && k < layout.end(factor);
      (shared ? in : out)[r * n + k] = 1.0;
    }
  }
  const Tensor mask_in({b, n}, std::move(in));
  const Tensor mask_out({b, n}, std::move(out));
  const Tensor coupled = square(fb.y - fa.y * rho) * mask_in * (1.0 / (1.0 - rho * rho));
  const Tensor free_b = square(fb.y) * mask_out;
  const Tensor quad = sum(coupled + free_b + square(fa.y), 1) * 0.5;
  return quad - fa.logdet - fb.logdet;
}

double pair_nll_constant(const SemanticModel& model, std::size_t factor) {
  const FactorLayout& layout = model.layout();
  const double rho = model.rho();
  return std::log(2.0 * std::numbers::pi) * static_cast<double>(layout.total()) +
         0.5 * static_cast<double>(layout.dim(factor)) * std::log(1.0 - rho * rho);
}

Tensor swap_factor(const SemanticModel& model, const Tensor& zbar_src, const Tensor& zbar_donor, std::size_t factor) {
  if (factor >= model.layout().count()) throw DomainError("swap_factor: factor out of range");
  auto src = model.factorize(zbar_src, nullptr);
  const auto donor = model.factorize(zbar_donor, nullptr);
  src[factor] = donor[factor];
  return model.defactorize(src, nullptr);
}

std::vector<PairRow> train_sinn(SemanticModel& model, const Autoencoder& encoder, const SinnTrainConfig& config) {
  if (config.batch == 0) throw DomainError("train_sinn: batch must be positive");
  if (model.layout().count() != kAllConcepts.size() + 1)
    throw DomainError("train_sinn: layout must have one factor per glyph concept");
  const std::uint64_t encoder_hash = parameter_hash(encoder.parameters());
  const Rng root(config.seed);
  Rng pair_rng = root.derive(0);
  Rng noise_rng = root.derive(1);
  Rng concept_rng = root.derive(2);

  auto encode_samples = [&](const std::vector<GlyphSample>& s) {
    return reparameterize(encoder.encode(images_tensor(s), nullptr), noise_rng);
  };

  {
    std::vector<GlyphSample> init;
    for (std::size_t i = 0; i < config.init_batch; ++i) init.push_back(gen_sample(pair_rng));
    model.initialize(encode_samples(init));
  }

  auto params = model.parameters();
  Adam adam(params, config.adam);
  std::vector<std::vector<double>> snapshot;
  std::size_t snapshot_step = 0;
  auto take_snapshot = [&](std::size_t step) {
    snapshot.clear();
    for (const Parameter* p : params) snapshot.push_back(*p->value);
    snapshot_step = step;
  };
  take_snapshot(0);

  std::vector<PairRow> rows;
  rows.reserve(config.steps);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const double progress = config.steps > 1 ? static_cast<double>(step - 1) / static_cast<double>(config.steps - 1) : 0.0;
    adam.set_lr(config.adam.lr * (1.0 - progress * (1.0 - config.final_lr_fraction)));
    const Concept concept_id = kAllConcepts[concept_rng.below(kAllConcepts.size())];
    std::vector<GlyphSample> a, b;
    for (std::size_t i = 0; i < config.batch; ++i) {
      ConceptPair p = gen_pair(concept_id, pair_rng);
      a.push_back(std::move(p.a));
      b.push_back(std::move(p.b));
    }
    const Tensor za = encode_samples(a);
    const Tensor zb = encode_samples(b);
    Tape tape;
    const Tensor loss = mean(pair_nll(model, za, zb, factor_index(concept_id), &tape));
    const double value = loss.item();
    if (!std::isfinite(value)) {
      for (std::size_t k = 0; k < params.size(); ++k) *params[k]->value = snapshot[k];
      std::ostringstream msg;
      msg << "train_sinn: loss is not finite at step " << step << "; parameters restored to step " << snapshot_step;
      throw TrainingError(msg.str());
    }
    tape.backward(loss);
    adam.step(tape);
    rows.push_back({step, std::string(concept_name(concept_id)), value});
    if (config.snapshot_every > 0 && step % config.snapshot_every == 0) take_snapshot(step);
  }
  if (parameter_hash(encoder.parameters()) != encoder_hash)
    throw StateError("train_sinn: encoder parameters changed during training");
  return rows;
}

std::string pair_csv(const std::vector<PairRow>& rows) {
  std::string out = "step,concept,nll\n";
  for (const auto& r : rows) out += std::to_string(r.step) + "," + r.concept_name + "," + format_double(r.nll) + "\n";
  return out;
}

}  // namespace invlens
