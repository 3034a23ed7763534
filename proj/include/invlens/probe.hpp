#pragma once

// Classifier under interpretation: an MLP whose post-activation layer
// outputs are addressable by name ("tap0", "tap1", ... then "logits").

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "invlens/glyph.hpp"
#include "invlens/nn.hpp"
#include "invlens/rng.hpp"
#include "invlens/tensor.hpp"

namespace invlens {

class Checkpoint;

struct ProbeConfig {
  std::size_t input_dim = kImagePixels;
  std::vector<std::size_t> hidden{256, 128, 64};
  std::size_t classes = kGlyphClasses;
};

class Probe {
 public:
  Probe() = default;
  Probe(const ProbeConfig& config, Rng& rng);

  Tensor forward(const Tensor& x, Tape* tape) const;
  // Throws DomainError naming the valid taps when `tap` is unknown.
  Tensor forward_with_tap(const Tensor& x, const std::string& tap, Tape* tape) const;

  std::vector<std::string> tap_names() const;
  std::size_t tap_dim(const std::string& tap) const;
  const ProbeConfig& config() const { return config_; }

  std::vector<Parameter*> parameters() { return net_.parameters(); }
  std::vector<const Parameter*> parameters() const { return net_.parameters(); }

  void save(Checkpoint& ckpt) const;
  static Probe load(const Checkpoint& ckpt);

 private:
  std::size_t tap_index(const std::string& tap) const;

  ProbeConfig config_;
  Mlp net_;
};

// Mean softmax cross-entropy.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);
std::vector<std::size_t> predict(const Probe& probe, const Tensor& x);
double accuracy(const Probe& probe, const Tensor& x, const std::vector<std::size_t>& labels);

struct ProbeSnapshot {
  std::size_t step = 0;
  std::vector<std::vector<double>> values;  // parameter values in parameters() order
  double accuracy = 0.0;
};

// Probe states saved during training, steps strictly increasing.
class CheckpointSet {
 public:
  CheckpointSet() = default;
  explicit CheckpointSet(ProbeConfig config) : config_(std::move(config)) {}

  void add(std::size_t step, const Probe& probe, double accuracy);
  std::size_t size() const { return snapshots_.size(); }
  const ProbeSnapshot& at(std::size_t i) const { return snapshots_.at(i); }
  const std::vector<ProbeSnapshot>& snapshots() const { return snapshots_; }
  Probe model(std::size_t i) const;
  // "step0", "final", "ckpt<i>" or "step<n>".
  std::size_t resolve(const std::string& label) const;

  std::string accuracy_csv() const;
  void save(Checkpoint& ckpt) const;
  static CheckpointSet load(const Checkpoint& ckpt);

 private:
  ProbeConfig config_;
  std::vector<ProbeSnapshot> snapshots_;
};

struct ProbeTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 64;
  AdamConfig adam{.lr = 1e-3};
  std::size_t checkpoints = 20;
  std::uint64_t seed = 2;
};

// Evenly spaced snapshot steps from 0 to `steps` inclusive.
std::vector<std::size_t> checkpoint_steps(std::size_t steps, std::size_t count);

// Trains in place; accuracy of each snapshot is measured on `heldout`.
// Throws TrainingError on a non-finite loss.
CheckpointSet train_classifier(Probe& probe, const std::vector<GlyphSample>& train,
                               const std::vector<GlyphSample>& heldout, const ProbeTrainConfig& config);

// Targeted: x* = clip(x - eps sign(grad_x CE(logits, target)), -1, 1).
// Untargeted: x* = clip(x + eps sign(grad_x CE(logits, label)), -1, 1).
Tensor fgsm(const Probe& probe, const Tensor& x, const std::vector<std::size_t>& classes, double eps,
            bool targeted = true);

}  // namespace invlens
