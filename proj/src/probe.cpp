#include "invlens/probe.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "invlens/autoencoder.hpp"
#include "invlens/checkpoint.hpp"
#include "invlens/meta.hpp"

namespace invlens {

namespace {

std::vector<std::size_t> probe_widths(const ProbeConfig& c) {
  std::vector<std::size_t> w{c.input_dim};
  w.insert(w.end(), c.hidden.begin(), c.hidden.end());
  w.push_back(c.classes);
  return w;
}

void write_probe_meta(Checkpoint& ckpt, const ProbeConfig& c) {
  ckpt.set_meta("probe.input_dim", std::to_string(c.input_dim));
  ckpt.set_meta("probe.hidden", join_sizes(c.hidden));
  ckpt.set_meta("probe.classes", std::to_string(c.classes));
}

ProbeConfig read_probe_meta(const Checkpoint& ckpt) {
  if (!ckpt.has_meta("probe.hidden")) throw FormatError("checkpoint does not hold a probe classifier");
  ProbeConfig c;
  c.input_dim = static_cast<std::size_t>(ckpt.meta_number("probe.input_dim"));
  c.hidden = parse_sizes(ckpt.meta("probe.hidden"));
  c.classes = static_cast<std::size_t>(ckpt.meta_number("probe.classes"));
  return c;
}

}  // namespace

Probe::Probe(const ProbeConfig& config, Rng& rng) : config_(config), net_("probe", probe_widths(config), rng) {}

Tensor Probe::forward(const Tensor& x, Tape* tape) const { return net_.forward(x, tape); }

std::vector<std::string> Probe::tap_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < config_.hidden.size(); ++i) out.push_back("tap" + std::to_string(i));
  out.push_back("logits");
  return out;
}

std::size_t Probe::tap_index(const std::string& tap) const {
  const auto names = tap_names();
  const auto it = std::find(names.begin(), names.end(), tap);
  if (it == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw DomainError("unknown tap '" + tap + "' (valid taps: " + valid + ")");
  }
  return static_cast<std::size_t>(it - names.begin());
}

std::size_t Probe::tap_dim(const std::string& tap) const { return net_.layers()[tap_index(tap)].out_dim(); }

Tensor Probe::forward_with_tap(const Tensor& x, const std::string& tap, Tape* tape) const {
  const std::size_t k = tap_index(tap);
  Tensor h = x;
  const auto& layers = net_.layers();
  for (std::size_t i = 0; i <= k; ++i) {
    h = layers[i].forward(h, tape);
    if (i + 1 < layers.size()) h = leaky_relu(h);
  }
  return h;
}

void Probe::save(Checkpoint& ckpt) const {
  write_probe_meta(ckpt, config_);
  save_parameters(ckpt, parameters());
}

Probe Probe::load(const Checkpoint& ckpt) {
  Rng rng(0);
  Probe p(read_probe_meta(ckpt), rng);
  load_parameters(ckpt, p.parameters());
  return p;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  std::vector<double> onehot(b * k, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) throw DomainError("cross_entropy: label out of range");
    onehot[i * k + labels[i]] = 1.0;
  }
  return sum(log_softmax(logits) * Tensor({b, k}, std::move(onehot))) * (-1.0 / static_cast<double>(b));
}

std::vector<std::size_t> predict(const Probe& probe, const Tensor& x) {
  const Tensor logits = probe.forward(x, nullptr);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

double accuracy(const Probe& probe, const Tensor& x, const std::vector<std::size_t>& labels) {
  const auto pred = predict(probe, x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels.at(i) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// ---- CheckpointSet ---------------------------------------------------------

void CheckpointSet::add(std::size_t step, const Probe& probe, double acc) {
  if (!snapshots_.empty() && step <= snapshots_.back().step)
    throw DomainError("CheckpointSet: steps must be strictly increasing");
  ProbeSnapshot s{step, {}, acc};
  for (const Parameter* p : probe.parameters()) s.values.push_back(*p->value);
  snapshots_.push_back(std::move(s));
}

Probe CheckpointSet::model(std::size_t i) const {
  Rng rng(0);
  Probe p(config_, rng);
  const auto& snap = snapshots_.at(i);
  auto params = p.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) *params[k]->value = snap.values.at(k);
  return p;
}

std::size_t CheckpointSet::resolve(const std::string& label) const {
  if (snapshots_.empty()) throw DomainError("CheckpointSet: no snapshots");
  if (label == "step0" && snapshots_.front().step == 0) return 0;
  if (label == "final") return snapshots_.size() - 1;
  auto number = [&](std::size_t prefix) -> std::optional<std::size_t> {
    const std::string digits = label.substr(prefix);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) return std::nullopt;
    return static_cast<std::size_t>(std::stoull(digits));
  };
  if (label.rfind("ckpt", 0) == 0) {
    if (auto n = number(4); n && *n < snapshots_.size()) return *n;
  } else if (label.rfind("step", 0) == 0) {
    if (auto n = number(4)) {
      for (std::size_t i = 0; i < snapshots_.size(); ++i)
        if (snapshots_[i].step == *n) return i;
    }
  }
  throw DomainError("unknown probe checkpoint '" + label + "' (use step0, final, ckpt<i> or step<n>)");
}

std::string CheckpointSet::accuracy_csv() const {
  std::string out = "checkpoint,step,accuracy\n";
  for (std::size_t i = 0; i < snapshots_.size(); ++i)
    out += std::to_string(i) + "," + std::to_string(snapshots_[i].step) + "," +
           format_double(snapshots_[i].accuracy) + "\n";
  return out;
}

void CheckpointSet::save(Checkpoint& ckpt) const {
  write_probe_meta(ckpt, config_);
  ckpt.set_meta("probeset.count", std::to_string(snapshots_.size()));
  Rng rng(0);
  const Probe shape_probe(config_, rng);
  const auto params = shape_probe.parameters();
  for (std::size_t i = 0; i < snapshots_.size(); ++i) {
    const auto& s = snapshots_[i];
    const std::string prefix = "s" + std::to_string(i) + ".";
    ckpt.set_meta(prefix + "step", std::to_string(s.step));
    ckpt.set_meta(prefix + "accuracy", format_double(s.accuracy));
    for (std::size_t k = 0; k < params.size(); ++k) ckpt.put(prefix + params[k]->name, params[k]->shape, s.values[k]);
  }
}

CheckpointSet CheckpointSet::load(const Checkpoint& ckpt) {
  CheckpointSet set(read_probe_meta(ckpt));
  if (!ckpt.has_meta("probeset.count")) throw FormatError("checkpoint does not hold a probe checkpoint set");
  const auto count = static_cast<std::size_t>(ckpt.meta_number("probeset.count"));
  Rng rng(0);
  const Probe shape_probe(set.config_, rng);
  const auto params = shape_probe.parameters();
  for (std::size_t i = 0; i < count; ++i) {
    const std::string prefix = "s" + std::to_string(i) + ".";
    ProbeSnapshot s;
    s.step = static_cast<std::size_t>(ckpt.meta_number(prefix + "step"));
    s.accuracy = ckpt.meta_number(prefix + "accuracy");
    for (const Parameter* p : params) {
      const auto& e = ckpt.get(prefix + p->name);
      if (e.shape != p->shape) throw FormatError("shape mismatch for " + prefix + p->name);
      s.values.push_back(e.values);
    }
    if (!set.snapshots_.empty() && s.step <= set.snapshots_.back().step)
      throw FormatError("probe checkpoint steps are not increasing");
    set.snapshots_.push_back(std::move(s));
  }
  return set;
}

// ---- training ----------------------------------------------------------------

std::vector<std::size_t> checkpoint_steps(std::size_t steps, std::size_t count) {
  if (count < 2) throw DomainError("checkpoint_steps: need at least two checkpoints");
  if (steps < count - 1) throw DomainError("checkpoint_steps: fewer training steps than checkpoints");
  std::vector<std::size_t> out(count);
  for (std::size_t k = 0; k < count; ++k) out[k] = (k * steps + (count - 1) / 2) / (count - 1);
  return out;
}

CheckpointSet train_classifier(Probe& probe, const std::vector<GlyphSample>& train,
                               const std::vector<GlyphSample>& heldout, const ProbeTrainConfig& config) {
  if (train.empty() || heldout.empty()) throw DomainError("train_classifier: empty dataset");
  const auto marks = checkpoint_steps(config.steps, config.checkpoints);
  const Tensor held_x = images_tensor(heldout);
  const auto held_y = labels(heldout);

  CheckpointSet set(probe.config());
  Rng rng = Rng(config.seed).derive(0);
  Adam adam(probe.parameters(), config.adam);
  std::size_t next_mark = 0;
  std::vector<std::size_t> idx(config.batch), y(config.batch);
  for (std::size_t step = 0;; ++step) {
    if (next_mark < marks.size() && marks[next_mark] == step) {
      set.add(step, probe, accuracy(probe, held_x, held_y));
      ++next_mark;
    }
    if (step == config.steps) break;
    for (std::size_t i = 0; i < config.batch; ++i) {
      idx[i] = static_cast<std::size_t>(rng.below(train.size()));
      y[i] = train[idx[i]].class_id;
    }
    Tape tape;
    const Tensor loss = cross_entropy(probe.forward(images_tensor(train, idx), &tape), y);
    if (!std::isfinite(loss.item())) {
      std::ostringstream msg;
      msg << "train_classifier: loss is not finite at step " << step + 1;
      throw TrainingError(msg.str());
    }
    tape.backward(loss);
    adam.step(tape);
  }
  return set;
}

Tensor fgsm(const Probe& probe, const Tensor& x, const std::vector<std::size_t>& classes, double eps, bool targeted) {
  if (eps < 0.0) throw DomainError("fgsm: eps must be non-negative");
  Tape tape;
  const Tensor leaf = tape.leaf(x.detach());
  tape.backward(cross_entropy(probe.forward(leaf, &tape), classes));
  const auto g = tape.grad(leaf);
  const double dir = targeted ? -1.0 : 1.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    double v = x[i] + dir * eps * s;
    // rounding in x + eps can overshoot the budget by an ulp
    while (std::abs(v - x[i]) > eps) v = std::nextafter(v, x[i]);
    out[i] = std::clamp(v, -1.0, 1.0);
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace invlens
