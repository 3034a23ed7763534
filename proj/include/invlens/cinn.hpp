#pragma once

// Conditional invertible network t: zbar <-> v given the representation z
// of a frozen probe layer, trained by conditional maximum likelihood.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "invlens/autoencoder.hpp"
#include "invlens/flow.hpp"
#include "invlens/probe.hpp"

namespace invlens {

struct InvarianceConfig {
  std::size_t latent = 64;
  std::size_t cond_dim = 64;  // dimension of z at the chosen tap
  std::string tap = "tap2";
  std::size_t embed_hidden = 128;
  std::size_t embed_out = 32;
  std::size_t blocks = 20;
  std::size_t hidden_width = 512;
  std::size_t hidden_depth = 2;
  double clamp = 2.0;
};

class InvarianceModel {
 public:
  InvarianceModel() = default;
  InvarianceModel(const InvarianceConfig& config, Rng& rng);

  // Embedding statistics from all representations, actnorm from one batch.
  void initialize(const Tensor& zbar_batch, const Tensor& z_batch, const Tensor& z_all);
  void set_identity();

  FlowOutput forward(const Tensor& zbar, const Tensor& z, Tape* tape) const;
  Tensor inverse(const Tensor& v, const Tensor& z, Tape* tape) const;

  const InvarianceConfig& config() const { return config_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  const FlowStack& flow() const { return flow_; }
  const ConditionEmbedding& embedding() const { return embed_; }

  void save(Checkpoint& ckpt) const;
  static InvarianceModel load(const Checkpoint& ckpt);

 private:
  InvarianceConfig config_;
  ConditionEmbedding embed_;
  FlowStack flow_;
};

// Per-example 0.5 |t(zbar|z)|^2 + (N/2) log 2 pi - log|det dt/dzbar|.
Tensor nll(const InvarianceModel& model, const Tensor& zbar, const Tensor& z, Tape* tape);

struct ZbarDraws {
  Tensor v;     // [count x N]
  Tensor zbar;  // [count x N]
};

// v ~ N(0, I), zbar = t^-1(v | z) for one representation row z ([1 x cond_dim] or [cond_dim]).
ZbarDraws sample_zbar(const InvarianceModel& model, const Tensor& z, Rng& rng, std::size_t count);
Tensor recover_v(const InvarianceModel& model, const Tensor& zbar, const Tensor& z);

// Training rows: encoder code (mu with optional log_var for fresh
// reparameterized draws) paired with the representation z of the same input.
struct CinnData {
  Tensor mu;
  std::optional<Tensor> log_var;
  Tensor z;
};

// Encodes images and reads the probe tap, in chunks.
CinnData prepare_cinn_data(const Autoencoder& encoder, const Probe& probe, const std::string& tap, const Tensor& images);

struct CinnTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 64;
  AdamConfig adam{};  // lr 1e-4, betas 0.9 / 0.999, eps 1e-8
  // Learning rate falls linearly to lr * final_lr_fraction at the last step.
  double final_lr_fraction = 1.0;
  std::size_t init_batch = 512;
  std::size_t snapshot_every = 100;
  std::uint64_t seed = 3;
};

struct NllRow {
  std::size_t step;
  double nll;
};

// Initializes the model from the data, then trains. On a non-finite loss the
// parameters are restored to the last finite snapshot and TrainingError is thrown.
std::vector<NllRow> train_cinn(InvarianceModel& model, const CinnData& data, const CinnTrainConfig& config);

// Glyph pipeline entry point. Throws StateError if the encoder or probe
// parameters change.
std::vector<NllRow> train_cinn(InvarianceModel& model, const Tensor& images, const Autoencoder& encoder,
                               const Probe& probe, const CinnTrainConfig& config);

std::string nll_csv(const std::vector<NllRow>& rows);

// Mean of nll over rows of (zbar, z).
double mean_nll(const InvarianceModel& model, const Tensor& zbar, const Tensor& z);

// FNV-1a over parameter names, shapes and value bytes.
std::uint64_t parameter_hash(const std::vector<const Parameter*>& params);
std::uint64_t parameter_hash(const std::vector<Parameter*>& params);

// Rows [begin, end) of a matrix.
Tensor row_slice(const Tensor& m, std::size_t begin, std::size_t end);
// The same row repeated `count` times.
Tensor repeat_row(const Tensor& row, std::size_t count);

}  // namespace invlens
