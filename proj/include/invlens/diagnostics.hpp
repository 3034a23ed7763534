#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "invlens/autoencoder.hpp"
#include "invlens/cinn.hpp"
#include "invlens/probe.hpp"
#include "invlens/sinn.hpp"

namespace invlens {

struct VarianceReport {
  std::string id;
  double ratio = 0.0;
  double standard_error = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
  std::size_t n_outer = 0;
  std::size_t n_inner = 0;
  std::uint64_t seed = 0;
};

// Total variance = trace of the unbiased sample covariance of the rows.
double total_variance(const Tensor& samples);

// groups[g] holds n_inner samples (rows) drawn with the outer variable fixed.
// ratio = mean_g total_variance(groups[g]) / total_variance(all rows pooled);
// standard error over the outer expectation.
VarianceReport variance_ratio(const std::vector<Tensor>& groups);

struct SamplingConfig {
  std::size_t n_outer = 200;
  std::size_t n_inner = 50;
  std::uint64_t seed = 11;
  std::size_t threads = 1;
};

// Representation rows z (one per data point) for a probe tap.
Tensor representations(const Probe& probe, const std::string& tap, const Tensor& images);

// Outer: a data point x' (row of `reps`); inner: v ~ N(0, I); sample zbar = t^-1(v | z(x')).
std::vector<Tensor> invariance_groups(const InvarianceModel& t, const Tensor& reps, const SamplingConfig& cfg);
VarianceReport explained_by_invariances(const InvarianceModel& t, const Tensor& reps, const SamplingConfig& cfg);

// Outer: v' ~ N(0, I); inner: data points x; sample e(t^-1(v' | z(x)))_factor.
VarianceReport explained_by_representation(const InvarianceModel& t, const SemanticModel& e, const Tensor& reps,
                                           std::size_t factor, const SamplingConfig& cfg);

using DecodeFn = std::function<Tensor(const Tensor&)>;

// Mean over n_outer inputs of the summed per-pixel variance of decode(t^-1(v | z))
// across n_inner draws. Uses the same draws as invariance_groups.
double variance_proxy(const InvarianceModel& t, const DecodeFn& decode, const Tensor& reps, const SamplingConfig& cfg);

struct AttackRecord {
  Tensor x;          // clean inputs
  Tensor x_adv;      // FGSM inputs
  Tensor v;          // t(E(x) | z(x))
  Tensor recon;      // D(t^-1(v | z(x)))
  Tensor decoded;    // D(t^-1(v | z(x_adv)))
};

// Attack target per input: the next class (label + 1 mod K), or the
// highest-scoring class other than the label.
enum class TargetRule { kNext, kRunnerUp };
TargetRule parse_target_rule(const std::string& name);
std::vector<std::size_t> attack_targets(const Probe& probe, const Tensor& x, const std::vector<std::size_t>& labels,
                                        TargetRule rule);

AttackRecord attack_visualize(const InvarianceModel& t, const Probe& probe, const Autoencoder& ae, const Tensor& x,
                              const std::vector<std::size_t>& targets, double eps);

// Fraction of rows of `images` that the probe assigns to the given classes.
double agreement(const Probe& probe, const Tensor& images, const std::vector<std::size_t>& classes);

// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct EvolutionRow {
  std::size_t checkpoint = 0;
  std::size_t step = 0;
  double accuracy = 0.0;
  std::vector<VarianceReport> factors;  // index = factor id
};

// One row per checkpoint that has a trained t; missing entries are skipped
// with a warning.
std::vector<EvolutionRow> factor_evolution(const CheckpointSet& checkpoints,
                                           const std::vector<std::optional<InvarianceModel>>& ts,
                                           const SemanticModel& e, const Tensor& images, const SamplingConfig& cfg);

std::string report_csv(const std::vector<VarianceReport>& reports);
std::string evolution_csv(const std::vector<EvolutionRow>& rows);

}  // namespace invlens
