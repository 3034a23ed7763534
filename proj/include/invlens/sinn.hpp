#pragma once

// Semantic invertible network e: zbar <-> (e_0, ..., e_K). Factor e_i for
// i >= 1 tracks one labeled concept; e_0 holds everything else.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "invlens/autoencoder.hpp"
#include "invlens/flow.hpp"
#include "invlens/glyph.hpp"

namespace invlens {

// Contiguous index sets, residual first.
class FactorLayout {
 public:
  FactorLayout() = default;
  FactorLayout(std::size_t total, const std::vector<std::size_t>& concept_dims);

  std::size_t total() const { return total_; }
  std::size_t count() const { return dims_.size(); }  // K + 1
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t begin(std::size_t i) const;
  std::size_t end(std::size_t i) const { return begin(i) + dim(i); }
  const std::vector<std::size_t>& dims() const { return dims_; }

 private:
  std::size_t total_ = 0;
  std::vector<std::size_t> dims_;
};

// Factor index of a glyph concept in the default layout (class, fg, bg).
std::size_t factor_index(Concept c);

struct SemanticConfig {
  std::size_t latent = 64;
  std::vector<std::size_t> concept_dims{8, 8, 8};
  double rho = 0.9;
  std::size_t blocks = 12;
  std::size_t hidden_width = 512;
  std::size_t hidden_depth = 2;
  double clamp = 2.0;
  bool shuffle = true;
};

class SemanticModel {
 public:
  SemanticModel() = default;
  SemanticModel(const SemanticConfig& config, Rng& rng);

  void initialize(const Tensor& zbar_batch) { flow_.initialize(zbar_batch, std::nullopt); }
  void set_identity() { flow_.set_identity(); }

  FlowOutput forward(const Tensor& zbar, Tape* tape) const { return flow_.forward(zbar, std::nullopt, tape); }
  std::vector<Tensor> factorize(const Tensor& zbar, Tape* tape) const;
  Tensor defactorize(const std::vector<Tensor>& factors, Tape* tape) const;

  const SemanticConfig& config() const { return config_; }
  const FactorLayout& layout() const { return layout_; }
  double rho() const { return config_.rho; }
  std::vector<Parameter*> parameters() { return flow_.parameters(); }
  std::vector<const Parameter*> parameters() const { return flow_.parameters(); }

  void save(Checkpoint& ckpt) const;
  static SemanticModel load(const Checkpoint& ckpt);

 private:
  SemanticConfig config_;
  FactorLayout layout_;
  FlowStack flow_;
};

// Per-example pair loss for factor i (1..K), constant dropped:
//   0.5 [ sum_{k in I_i} (eb_k - rho ea_k)^2 / (1 - rho^2) + sum_{k not in I_i} eb_k^2 + sum_k ea_k^2 ]
//   - log|det de(zbar_a)| - log|det de(zbar_b)|
Tensor pair_nll(const SemanticModel& model, const Tensor& zbar_a, const Tensor& zbar_b, std::size_t factor,
                Tape* tape);

// The dropped constant, log(2 pi) N + (|I_i| / 2) log(1 - rho^2).
double pair_nll_constant(const SemanticModel& model, std::size_t factor);

// Replaces factor i of src with the donor's and inverts.
Tensor swap_factor(const SemanticModel& model, const Tensor& zbar_src, const Tensor& zbar_donor, std::size_t factor);

struct SinnTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 64;  // pairs per step
  AdamConfig adam{};
  double final_lr_fraction = 1.0;
  std::size_t init_batch = 512;
  std::size_t snapshot_every = 100;
  std::uint64_t seed = 4;
};

struct PairRow {
  std::size_t step;
  std::string concept_name;
  double nll;
};

// Pairs are drawn fresh each step: one concept chosen uniformly, then
// `batch` glyph pairs sharing it, encoded by the frozen encoder and
// reparameterized.
std::vector<PairRow> train_sinn(SemanticModel& model, const Autoencoder& encoder, const SinnTrainConfig& config);

std::string pair_csv(const std::vector<PairRow>& rows);

}  // namespace invlens
