#include "invlens/cinn.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "invlens/checkpoint.hpp"

namespace invlens {

namespace {

FlowConfig flow_config(const InvarianceConfig& c) {
  FlowConfig f;
  f.dim = c.latent;
  f.blocks = c.blocks;
  f.hidden_width = c.hidden_width;
  f.hidden_depth = c.hidden_depth;
  f.clamp = c.clamp;
  f.cond_width = c.embed_out;
  return f;
}

constexpr std::size_t kChunk = 256;

}  // namespace

Tensor row_slice(const Tensor& m, std::size_t begin, std::size_t end) {
  if (m.rank() != 2 || begin >= end || end > m.dim(0)) throw DimensionError("row_slice: bad range");
  const std::size_t d = m.dim(1);
  const auto v = m.values();
  return Tensor({end - begin, d}, std::vector<double>(v.begin() + begin * d, v.begin() + end * d));
}

Tensor repeat_row(const Tensor& row, std::size_t count) {
  const auto v = row.values();
  if (!(row.rank() == 1 || (row.rank() == 2 && row.dim(0) == 1)))
    throw DimensionError("repeat_row: expected one row, got " + shape_string(row.shape()));
  std::vector<double> out;
  out.reserve(count * v.size());
  for (std::size_t i = 0; i < count; ++i) out.insert(out.end(), v.begin(), v.end());
  return Tensor({count, v.size()}, std::move(out));
}

InvarianceModel::InvarianceModel(const InvarianceConfig& config, Rng& rng)
    : config_(config),
      embed_("cinn.embed", config.cond_dim, config.embed_hidden, config.embed_out, rng),
      flow_("cinn.flow", flow_config(config), rng) {}

void InvarianceModel::initialize(const Tensor& zbar_batch, const Tensor& z_batch, const Tensor& z_all) {
  embed_.initialize(z_all);
  flow_.initialize(zbar_batch, embed_.forward(z_batch, nullptr));
}

void InvarianceModel::set_identity() { flow_.set_identity(); }

FlowOutput InvarianceModel::forward(const Tensor& zbar, const Tensor& z, Tape* tape) const {
  return flow_.forward(zbar, embed_.forward(z, tape), tape);
}

Tensor InvarianceModel::inverse(const Tensor& v, const Tensor& z, Tape* tape) const {
  return flow_.inverse(v, embed_.forward(z, tape), tape);
}

std::vector<Parameter*> InvarianceModel::parameters() {
  auto out = embed_.parameters();
  for (Parameter* p : flow_.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> InvarianceModel::parameters() const {
  auto out = embed_.parameters();
  for (const Parameter* p : flow_.parameters()) out.push_back(p);
  return out;
}

void InvarianceModel::save(Checkpoint& ckpt) const {
  ckpt.set_meta("cinn.latent", std::to_string(config_.latent));
  ckpt.set_meta("cinn.cond_dim", std::to_string(config_.cond_dim));
  ckpt.set_meta("cinn.tap", config_.tap);
  ckpt.set_meta("cinn.embed_hidden", std::to_string(config_.embed_hidden));
  ckpt.set_meta("cinn.embed_out", std::to_string(config_.embed_out));
  ckpt.set_meta("cinn.blocks", std::to_string(config_.blocks));
  ckpt.set_meta("cinn.hidden_width", std::to_string(config_.hidden_width));
  ckpt.set_meta("cinn.hidden_depth", std::to_string(config_.hidden_depth));
  ckpt.set_meta("cinn.clamp", format_double(config_.clamp));
  embed_.save(ckpt);
  flow_.save(ckpt);
}

InvarianceModel InvarianceModel::load(const Checkpoint& ckpt) {
  if (!ckpt.has_meta("cinn.latent")) throw FormatError("checkpoint does not hold an invariance model");
  InvarianceConfig c;
  auto size = [&](const char* key) { return static_cast<std::size_t>(ckpt.meta_number(key)); };
  c.latent = size("cinn.latent");
  c.cond_dim = size("cinn.cond_dim");
  c.tap = ckpt.meta("cinn.tap");
  c.embed_hidden = size("cinn.embed_hidden");
  c.embed_out = size("cinn.embed_out");
  c.blocks = size("cinn.blocks");
  c.hidden_width = size("cinn.hidden_width");
  c.hidden_depth = size("cinn.hidden_depth");
  c.clamp = ckpt.meta_number("cinn.clamp");
  Rng rng(0);
  InvarianceModel m(c, rng);
  m.embed_.load(ckpt);
  m.flow_.load(ckpt);
  return m;
}

Tensor nll(const InvarianceModel& model, const Tensor& zbar, const Tensor& z, Tape* tape) {
  return gaussian_nll(model.forward(zbar, z, tape));
}

ZbarDraws sample_zbar(const InvarianceModel& model, const Tensor& z, Rng& rng, std::size_t count) {
  if (count == 0) throw DomainError("sample_zbar: count must be positive");
  const Tensor zs = repeat_row(z, count);
  Tensor v = rng.normal_tensor({count, model.config().latent});
  Tensor zbar = model.inverse(v, zs, nullptr);
  return {std::move(v), std::move(zbar)};
}

Tensor recover_v(const InvarianceModel& model, const Tensor& zbar, const Tensor& z) {
  return model.forward(zbar, z, nullptr).y;
}

CinnData prepare_cinn_data(const Autoencoder& encoder, const Probe& probe, const std::string& tap, const Tensor& images) {
  const std::size_t n = images.dim(0);
  std::vector<double> mu, lv, z;
  for (std::size_t b = 0; b < n; b += kChunk) {
    const Tensor x = row_slice(images, b, std::min(n, b + kChunk));
    const GaussianCode code = encoder.encode(x, nullptr);
    const Tensor zt = probe.forward_with_tap(x, tap, nullptr);
    mu.insert(mu.end(), code.mu.values().begin(), code.mu.values().end());
    lv.insert(lv.end(), code.log_var.values().begin(), code.log_var.values().end());
    z.insert(z.end(), zt.values().begin(), zt.values().end());
  }
  const std::size_t latent = mu.size() / n, zd = z.size() / n;
  return {Tensor({n, latent}, std::move(mu)), Tensor({n, latent}, std::move(lv)), Tensor({n, zd}, std::move(z))};
}

std::vector<NllRow> train_cinn(InvarianceModel& model, const CinnData& data, const CinnTrainConfig& config) {
  const std::size_t n = data.mu.dim(0);
  if (n == 0 || data.z.dim(0) != n) throw DimensionError("train_cinn: code and representation counts differ");
  if (config.batch == 0) throw DomainError("train_cinn: batch must be positive");
  const Rng root(config.seed);
  Rng batch_rng = root.derive(0);
  Rng noise_rng = root.derive(1);

  auto draw = [&](const std::vector<std::size_t>& idx) {
    Tensor zbar = gather_rows(data.mu, idx);
    if (data.log_var) {
      const GaussianCode code{zbar, gather_rows(*data.log_var, idx)};
      zbar = reparameterize(code, noise_rng);
    }
    return std::make_pair(zbar, gather_rows(data.z, idx));
  };

  std::vector<std::size_t> init_idx(std::min(config.init_batch, n));
  for (auto& i : init_idx) i = static_cast<std::size_t>(batch_rng.below(n));
  {
    auto [zbar0, z0] = draw(init_idx);
    model.initialize(zbar0, z0, data.z);
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

  std::vector<NllRow> rows;
  rows.reserve(config.steps);
  std::vector<std::size_t> idx(config.batch);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const double progress = config.steps > 1 ? static_cast<double>(step - 1) / static_cast<double>(config.steps - 1) : 0.0;
    adam.set_lr(config.adam.lr * (1.0 - progress * (1.0 - config.final_lr_fraction)));
    for (auto& i : idx) i = static_cast<std::size_t>(batch_rng.below(n));
    auto [zbar, z] = draw(idx);
    Tape tape;
    const Tensor loss = mean(nll(model, zbar, z, &tape));
    const double value = loss.item();
    if (!std::isfinite(value)) {
      for (std::size_t k = 0; k < params.size(); ++k) *params[k]->value = snapshot[k];
      std::ostringstream msg;
      msg << "train_cinn: loss is not finite at step " << step << "; parameters restored to step " << snapshot_step;
      throw TrainingError(msg.str());
    }
    tape.backward(loss);
    adam.step(tape);
    rows.push_back({step, value});
    if (config.snapshot_every > 0 && step % config.snapshot_every == 0) take_snapshot(step);
  }
  return rows;
}

std::vector<NllRow> train_cinn(InvarianceModel& model, const Tensor& images, const Autoencoder& encoder,
                               const Probe& probe, const CinnTrainConfig& config) {
  const std::uint64_t before_e = parameter_hash(encoder.parameters());
  const std::uint64_t before_p = parameter_hash(probe.parameters());
  const CinnData data = prepare_cinn_data(encoder, probe, model.config().tap, images);
  auto rows = train_cinn(model, data, config);
  if (parameter_hash(encoder.parameters()) != before_e || parameter_hash(probe.parameters()) != before_p)
    throw StateError("train_cinn: encoder or probe parameters changed during training");
  return rows;
}

std::string nll_csv(const std::vector<NllRow>& rows) {
  std::string out = "step,nll\n";
  for (const auto& r : rows) out += std::to_string(r.step) + "," + format_double(r.nll) + "\n";
  return out;
}

double mean_nll(const InvarianceModel& model, const Tensor& zbar, const Tensor& z) {
  const std::size_t n = zbar.dim(0);
  double s = 0.0;
  for (std::size_t b = 0; b < n; b += kChunk) {
    const std::size_t e = std::min(n, b + kChunk);
    s += sum(nll(model, row_slice(zbar, b, e), row_slice(z, b, e), nullptr)).item();
  }
  return s / static_cast<double>(n);
}

std::uint64_t parameter_hash(const std::vector<const Parameter*>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    for (std::size_t d : p->shape) mix(&d, sizeof d);
    mix(p->value->data(), p->value->size() * sizeof(double));
  }
  return h;
}

}  // namespace invlens

namespace invlens {

std::uint64_t parameter_hash(const std::vector<Parameter*>& params) {
  return parameter_hash(std::vector<const Parameter*>(params.begin(), params.end()));
}

}  // namespace invlens
