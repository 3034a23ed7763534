#include "invlens/autoencoder.hpp"

#include <cmath>
#include <sstream>

#include "invlens/checkpoint.hpp"
#include "invlens/log.hpp"
#include "invlens/meta.hpp"

namespace invlens {

namespace {

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

Autoencoder::Autoencoder(const AeConfig& config, Rng& rng)
    : log_gamma_param("ae.log_gamma", {1}, {0.0}),
      config_(config),
      encoder_("ae.enc", widths(config.input_dim, config.encoder_hidden, 2 * config.latent), rng, Init::kZero),
      decoder_("ae.dec", widths(config.latent, config.decoder_hidden, config.input_dim), rng, Init::kHe,
               Activation::kTanh) {}

GaussianCode Autoencoder::encode(const Tensor& x, Tape* tape) const {
  if (x.rank() != 2 || x.dim(1) != config_.input_dim)
    throw DimensionError("encode: expected [b x " + std::to_string(config_.input_dim) + "], got " +
                         shape_string(x.shape()));
  auto parts = split(encoder_.forward(x, tape), 2, 1);
  return {parts[0], clamp(parts[1], kLogVarMin, kLogVarMax)};
}

Tensor Autoencoder::decode(const Tensor& zbar, Tape* tape) const {
  if (zbar.rank() != 2 || zbar.dim(1) != config_.latent)
    throw DimensionError("decode: expected [b x " + std::to_string(config_.latent) + "], got " +
                         shape_string(zbar.shape()));
  return decoder_.forward(zbar, tape);
}

Tensor Autoencoder::log_gamma(Tape* tape) const {
  const double raw = (*log_gamma_param.value)[0];
  if ((raw <= kLogGammaMin || raw >= kLogGammaMax) && !warned_clamp_) {
    warned_clamp_ = true;
    warn("autoencoder: output variance gamma hit its clamp (log gamma = " + format_double(raw) + ")");
  }
  return clamp(bind(log_gamma_param, tape), kLogGammaMin, kLogGammaMax);
}

std::vector<Parameter*> Autoencoder::parameters() {
  std::vector<Parameter*> out{&log_gamma_param};
  append_parameters(out, encoder_);
  append_parameters(out, decoder_);
  return out;
}

std::vector<Parameter*> Autoencoder::network_parameters() {
  std::vector<Parameter*> out;
  append_parameters(out, encoder_);
  append_parameters(out, decoder_);
  return out;
}

std::vector<const Parameter*> Autoencoder::parameters() const {
  std::vector<const Parameter*> out{&log_gamma_param};
  for (const Parameter* p : encoder_.parameters()) out.push_back(p);
  for (const Parameter* p : decoder_.parameters()) out.push_back(p);
  return out;
}

void Autoencoder::save(Checkpoint& ckpt) const {
  ckpt.set_meta("ae.input_dim", std::to_string(config_.input_dim));
  ckpt.set_meta("ae.latent", std::to_string(config_.latent));
  ckpt.set_meta("ae.encoder_hidden", join_sizes(config_.encoder_hidden));
  ckpt.set_meta("ae.decoder_hidden", join_sizes(config_.decoder_hidden));
  ckpt.set_meta("ae.gamma_per_pixel", config_.gamma_per_pixel ? "1" : "0");
  save_parameters(ckpt, parameters());
}

Autoencoder Autoencoder::load(const Checkpoint& ckpt) {
  if (!ckpt.has_meta("ae.latent")) throw FormatError("checkpoint does not hold an autoencoder");
  AeConfig cfg;
  cfg.input_dim = static_cast<std::size_t>(ckpt.meta_number("ae.input_dim"));
  cfg.latent = static_cast<std::size_t>(ckpt.meta_number("ae.latent"));
  cfg.encoder_hidden = parse_sizes(ckpt.meta("ae.encoder_hidden"));
  cfg.decoder_hidden = parse_sizes(ckpt.meta("ae.decoder_hidden"));
  cfg.gamma_per_pixel = ckpt.meta("ae.gamma_per_pixel") == "1";
  Rng rng(0);
  Autoencoder model(cfg, rng);
  load_parameters(ckpt, model.parameters());
  return model;
}

Tensor reparameterize(const GaussianCode& code, Rng& rng) {
  const Tensor eps = rng.normal_tensor(code.mu.shape());
  return code.mu + exp(code.log_var * 0.5) * eps;
}

Tensor kl_divergence(const GaussianCode& code) {
  const Tensor terms = square(code.mu) + exp(code.log_var) - code.log_var + (-1.0);
  return sum(terms, 1) * 0.5;
}

VaeTerms vae_loss(const Autoencoder& model, const Tensor& x, Rng& rng, Tape* tape) {
  const GaussianCode code = model.encode(x, tape);
  const Tensor xhat = model.decode(reparameterize(code, rng), tape);
  const Tensor sse = sum(square(x - xhat), 1);
  const std::size_t b = x.dim(0);
  const Tensor lg = model.log_gamma(tape);
  const double weight = model.config().gamma_per_pixel ? static_cast<double>(x.dim(1)) : 1.0;
  const Tensor recon = sse * broadcast_scalar(reshape(exp(-lg), {}), {b}) +
                       broadcast_scalar(reshape(lg * weight, {}), {b});
  const Tensor kl = kl_divergence(code);

  VaeTerms out;
  out.total = mean(recon + kl);
  out.pixel_mse = sum(sse).item() / static_cast<double>(x.size());
  out.kl = mean(kl).item();
  out.gamma = std::exp(lg[0]);
  return out;
}

std::vector<LossRow> train_ae(Autoencoder& model, const std::vector<GlyphSample>& data, const AeTrainConfig& config) {
  if (data.empty()) throw DomainError("train_ae: empty dataset");
  if (config.batch == 0) throw DomainError("train_ae: batch must be positive");
  const Rng root(config.seed);
  Rng batch_rng = root.derive(0);
  Rng noise_rng = root.derive(1);
  Adam adam(model.network_parameters(), config.adam);
  AdamConfig gamma_cfg = config.adam;
  gamma_cfg.lr = config.gamma_lr;
  Adam gamma_adam({&model.log_gamma_param}, gamma_cfg);

  std::vector<LossRow> rows;
  rows.reserve(config.steps);
  std::vector<std::size_t> idx(config.batch);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (auto& i : idx) i = static_cast<std::size_t>(batch_rng.below(data.size()));
    const Tensor x = images_tensor(data, idx);
    Tape tape;
    const VaeTerms terms = vae_loss(model, x, noise_rng, &tape);
    const double total = terms.total.item();
    if (!std::isfinite(total) || !std::isfinite(terms.kl)) {
      std::ostringstream msg;
      msg << "train_ae: loss diverged at step " << step << " (total=" << total << ", recon=" << terms.pixel_mse
          << ", kl=" << terms.kl << ", gamma=" << terms.gamma << ")";
      throw TrainingError(msg.str());
    }
    tape.backward(terms.total);
    adam.step(tape);
    gamma_adam.step(tape);
    rows.push_back({step, terms.pixel_mse, terms.kl, terms.gamma, total});
  }
  return rows;
}

std::string loss_csv(const std::vector<LossRow>& rows) {
  std::string out = "step,recon,kl,gamma,total\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + format_double(r.recon) + "," + format_double(r.kl) + "," +
           format_double(r.gamma) + "," + format_double(r.total) + "\n";
  }
  return out;
}

double reconstruction_mse(const Autoencoder& model, const Tensor& x) {
  const Tensor xhat = model.decode(model.encode(x, nullptr).mu, nullptr);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - xhat[i]) * (x[i] - xhat[i]);
  return s / static_cast<double>(x.size());
}

}  // namespace invlens
