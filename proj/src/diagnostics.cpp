#include "invlens/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "invlens/checkpoint.hpp"
#include "invlens/log.hpp"
#include "invlens/runtime.hpp"

namespace invlens {

namespace {

constexpr std::size_t kChunk = 256;

void require_inner(const SamplingConfig& cfg) {
  if (cfg.n_inner < 2) throw DomainError("variance estimate needs n_inner >= 2");
  if (cfg.n_outer < 1) throw DomainError("variance estimate needs n_outer >= 1");
}

const char* factor_label(std::size_t i) {
  static const char* names[] = {"residual", "class", "fg", "bg"};
  return i < 4 ? names[i] : "factor";
}

}  // namespace

double total_variance(const Tensor& samples) {
  if (samples.rank() != 2 || samples.dim(0) < 2) throw DomainError("total_variance: need at least two rows");
  const std::size_t n = samples.dim(0), d = samples.dim(1);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += samples.at(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = samples.at(i, j) - mean[j];
      s += c * c;
    }
  return s / static_cast<double>(n - 1);
}

VarianceReport variance_ratio(const std::vector<Tensor>& groups) {
  if (groups.empty()) throw DomainError("variance_ratio: no groups");
  const std::size_t inner = groups.front().dim(0);
  if (inner < 2) throw DomainError("variance estimate needs n_inner >= 2");
  std::vector<double> pooled;
  std::vector<double> within(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].shape() != groups.front().shape()) throw DimensionError("variance_ratio: ragged groups");
    within[g] = total_variance(groups[g]);
    pooled.insert(pooled.end(), groups[g].values().begin(), groups[g].values().end());
  }
  const std::size_t d = groups.front().dim(1);
  VarianceReport r;
  r.n_outer = groups.size();
  r.n_inner = inner;
  r.denominator = total_variance(Tensor({groups.size() * inner, d}, std::move(pooled)));
  r.numerator = std::accumulate(within.begin(), within.end(), 0.0) / static_cast<double>(groups.size());
  r.ratio = r.denominator > 0.0 ? r.numerator / r.denominator : 0.0;
  if (groups.size() > 1 && r.denominator > 0.0) {
    double ss = 0.0;
    for (double w : within) ss += (w / r.denominator - r.ratio) * (w / r.denominator - r.ratio);
    r.standard_error = std::sqrt(ss / static_cast<double>(groups.size() - 1) / static_cast<double>(groups.size()));
  }
  return r;
}

Tensor representations(const Probe& probe, const std::string& tap, const Tensor& images) {
  const std::size_t n = images.dim(0);
  std::vector<double> out;
  std::size_t d = 0;
  for (std::size_t b = 0; b < n; b += kChunk) {
    const Tensor z = probe.forward_with_tap(row_slice(images, b, std::min(n, b + kChunk)), tap, nullptr);
    d = z.dim(1);
    out.insert(out.end(), z.values().begin(), z.values().end());
  }
  return Tensor({n, d}, std::move(out));
}

std::vector<Tensor> invariance_groups(const InvarianceModel& t, const Tensor& reps, const SamplingConfig& cfg) {
  require_inner(cfg);
  const Rng root(cfg.seed);
  std::vector<Tensor> groups(cfg.n_outer);
  parallel_for(cfg.n_outer, cfg.threads, [&](std::size_t g) {
    Rng rng = root.derive(g);
    const std::size_t i = static_cast<std::size_t>(rng.below(reps.dim(0)));
    groups[g] = sample_zbar(t, row_slice(reps, i, i + 1), rng, cfg.n_inner).zbar;
  });
  return groups;
}

VarianceReport explained_by_invariances(const InvarianceModel& t, const Tensor& reps, const SamplingConfig& cfg) {
  VarianceReport r = variance_ratio(invariance_groups(t, reps, cfg));
  r.id = t.config().tap;
  r.seed = cfg.seed;
  return r;
}

VarianceReport explained_by_representation(const InvarianceModel& t, const SemanticModel& e, const Tensor& reps,
                                           std::size_t factor, const SamplingConfig& cfg) {
  require_inner(cfg);
  if (factor >= e.layout().count()) throw DomainError("explained_by_representation: factor out of range");
  const Rng root(cfg.seed);
  std::vector<Tensor> groups(cfg.n_outer);
  parallel_for(cfg.n_outer, cfg.threads, [&](std::size_t g) {
    Rng rng = root.derive(g);
    const Tensor v = rng.normal_tensor({1, t.config().latent});
    std::vector<std::size_t> idx(cfg.n_inner);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(reps.dim(0)));
    const Tensor zbar = t.inverse(repeat_row(v, cfg.n_inner), gather_rows(reps, idx), nullptr);
    groups[g] = e.factorize(zbar, nullptr)[factor];
  });
  VarianceReport r = variance_ratio(groups);
  r.id = factor_label(factor);
  r.seed = cfg.seed;
  return r;
}

double variance_proxy(const InvarianceModel& t, const DecodeFn& decode, const Tensor& reps, const SamplingConfig& cfg) {
  if (cfg.n_inner < 2) return 0.0;
  const auto groups = invariance_groups(t, reps, cfg);
  std::vector<double> per(groups.size());
  parallel_for(groups.size(), cfg.threads, [&](std::size_t g) { per[g] = total_variance(decode(groups[g])); });
  return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

AttackRecord attack_visualize(const InvarianceModel& t, const Probe& probe, const Autoencoder& ae, const Tensor& x,
                              const std::vector<std::size_t>& targets, double eps) {
  const std::string& tap = t.config().tap;
  AttackRecord rec;
  rec.x = x;
  rec.x_adv = fgsm(probe, x, targets, eps, true);
  const Tensor z = probe.forward_with_tap(x, tap, nullptr);
  const Tensor z_adv = probe.forward_with_tap(rec.x_adv, tap, nullptr);
  rec.v = recover_v(t, ae.encode(x, nullptr).mu, z);
  rec.recon = ae.decode(t.inverse(rec.v, z, nullptr), nullptr);
  rec.decoded = ae.decode(t.inverse(rec.v, z_adv, nullptr), nullptr);
  return rec;
}

TargetRule parse_target_rule(const std::string& name) {
  if (name == "next") return TargetRule::kNext;
  if (name == "runner-up") return TargetRule::kRunnerUp;
  throw DomainError("unknown attack target rule '" + name + "' (expected next or runner-up)");
}

std::vector<std::size_t> attack_targets(const Probe& probe, const Tensor& x, const std::vector<std::size_t>& labels,
                                        TargetRule rule) {
  const std::size_t k = probe.config().classes;
  std::vector<std::size_t> out(labels.size());
  if (rule == TargetRule::kNext) {
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = (labels[i] + 1) % k;
    return out;
  }
  const Tensor logits = probe.forward(x, nullptr);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = labels[i] == 0 ? 1 : 0;
    for (std::size_t c = 0; c < k; ++c)
      if (c != labels[i] && logits.at(i, c) > logits.at(i, best)) best = c;
    out[i] = best;
  }
  return out;
}

double agreement(const Probe& probe, const Tensor& images, const std::vector<std::size_t>& classes) {
  return accuracy(probe, images, classes);
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw DomainError("spearman: need two equal-length series");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<EvolutionRow> factor_evolution(const CheckpointSet& checkpoints,
                                           const std::vector<std::optional<InvarianceModel>>& ts,
                                           const SemanticModel& e, const Tensor& images, const SamplingConfig& cfg) {
  std::vector<EvolutionRow> rows;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    if (c >= ts.size() || !ts[c]) {
      warn("factor_evolution: no invariance model for checkpoint " + std::to_string(c) + ", skipped");
      continue;
    }
    const Probe probe = checkpoints.model(c);
    const Tensor reps = representations(probe, ts[c]->config().tap, images);
    EvolutionRow row;
    row.checkpoint = c;
    row.step = checkpoints.at(c).step;
    row.accuracy = checkpoints.at(c).accuracy;
    for (std::size_t f = 0; f < e.layout().count(); ++f)
      row.factors.push_back(explained_by_representation(*ts[c], e, reps, f, cfg));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string report_csv(const std::vector<VarianceReport>& reports) {
  std::string out = "id,ratio,se,n_outer,n_inner,seed\n";
  for (const auto& r : reports)
    out += r.id + "," + format_double(r.ratio) + "," + format_double(r.standard_error) + "," +
           std::to_string(r.n_outer) + "," + std::to_string(r.n_inner) + "," + std::to_string(r.seed) + "\n";
  return out;
}

std::string evolution_csv(const std::vector<EvolutionRow>& rows) {
  std::string out = "checkpoint,step,accuracy,factor,ratio,se,n_outer,n_inner,seed\n";
  for (const auto& row : rows)
    for (const auto& r : row.factors)
      out += std::to_string(row.checkpoint) + "," + std::to_string(row.step) + "," + format_double(row.accuracy) +
             "," + r.id + "," + format_double(r.ratio) + "," + format_double(r.standard_error) + "," +
             std::to_string(r.n_outer) + "," + std::to_string(r.n_inner) + "," + std::to_string(r.seed) + "\n";
  return out;
}

}  // namespace invlens
