#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "invlens/glyph.hpp"
#include "invlens/nn.hpp"
#include "invlens/rng.hpp"
#include "invlens/tensor.hpp"

namespace invlens {

class Checkpoint;

// Raised when a training loss stops being finite.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 20.0;
inline constexpr double kLogGammaMin = -13.815510557964274;  // log 1e-6
inline constexpr double kLogGammaMax = 13.815510557964274;

struct GaussianCode {
  Tensor mu;       // [b x N]
  Tensor log_var;  // [b x N], clamped to [kLogVarMin, kLogVarMax]
};

struct AeConfig {
  std::size_t input_dim = kImagePixels;
  std::size_t latent = 64;
  std::vector<std::size_t> encoder_hidden{512, 256};
  std::vector<std::size_t> decoder_hidden{256, 512};
  // true: the variance term weights every pixel, sum_i[(x_i - xhat_i)^2 / g + log g].
  // false: one term per image, |x - xhat|^2 / g + log g.
  bool gamma_per_pixel = true;
};

class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(const AeConfig& config, Rng& rng);

  GaussianCode encode(const Tensor& x, Tape* tape) const;
  Tensor decode(const Tensor& zbar, Tape* tape) const;
  // Clamped log gamma; warns once per model when the clamp is active.
  Tensor log_gamma(Tape* tape) const;

  const AeConfig& config() const { return config_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Encoder and decoder weights, without log gamma.
  std::vector<Parameter*> network_parameters();

  void save(Checkpoint& ckpt) const;
  static Autoencoder load(const Checkpoint& ckpt);

  Parameter log_gamma_param;

 private:
  AeConfig config_;
  Mlp encoder_;
  Mlp decoder_;
  mutable bool warned_clamp_ = false;
};

// zbar = mu + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from rng.
Tensor reparameterize(const GaussianCode& code, Rng& rng);

// Per-example KL(N(mu, sigma^2) || N(0, I)) = 0.5 sum(mu^2 + sigma^2 - 1 - log sigma^2).
Tensor kl_divergence(const GaussianCode& code);

struct VaeTerms {
  Tensor total;     // batch-mean loss, scalar
  double pixel_mse = 0.0;
  double kl = 0.0;  // batch mean
  double gamma = 0.0;
};

VaeTerms vae_loss(const Autoencoder& model, const Tensor& x, Rng& rng, Tape* tape);

struct AeTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 64;
  AdamConfig adam{.lr = 1e-3};
  // log gamma gets its own optimizer so the variance can track the error scale.
  double gamma_lr = 1e-2;
  std::uint64_t seed = 1;
};

struct LossRow {
  std::size_t step;
  double recon;  // pixel MSE of the batch
  double kl;
  double gamma;
  double total;
};

// Trains in place. Throws TrainingError on a non-finite loss.
std::vector<LossRow> train_ae(Autoencoder& model, const std::vector<GlyphSample>& data, const AeTrainConfig& config);

std::string loss_csv(const std::vector<LossRow>& rows);

// Mean squared pixel error of decode(mu) over the dataset.
double reconstruction_mse(const Autoencoder& model, const Tensor& x);

}  // namespace invlens
