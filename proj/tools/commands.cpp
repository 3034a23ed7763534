#include "commands.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include "artifacts.hpp"
#include "invlens/autoencoder.hpp"
#include "invlens/checkpoint.hpp"
#include "invlens/cinn.hpp"
#include "invlens/diagnostics.hpp"
#include "invlens/glyph.hpp"
#include "invlens/probe.hpp"
#include "invlens/runtime.hpp"
#include "invlens/sinn.hpp"
#include "json.hpp"

namespace invlens::cli {

namespace fs = std::filesystem;

namespace {

const char* kFactorNames[] = {"residual", "class", "fg", "bg"};

std::size_t factor_id(const std::string& name) {
  for (std::size_t i = 0; i < 4; ++i)
    if (name == kFactorNames[i]) return i;
  throw ConfigError(0, "factor", "unknown factor '" + name + "' (expected residual, class, fg or bg)");
}

// Pipeline state shared by the command implementations.
struct Context {
  std::string command;
  RunConfig cfg;
  std::string out_dir;
  Manifest manifest;

  Context(std::string name, RunConfig config, const std::optional<std::string>& out)
      : command(std::move(name)),
        cfg(std::move(config)),
        out_dir(out ? *out : (fs::path(cfg.get("run.dir")) / command).string()),
        manifest(command, cfg) {}

  std::string out(const std::string& file) const { return (fs::path(out_dir) / file).string(); }
  void emit(const std::string& file, const std::string& bytes) { manifest.output(out(file), bytes); }
  // Commands that may write into one directory several times name their
  // manifest after the run.
  int finish(const std::string& stem = "") {
    manifest.finish(out(stem.empty() ? "manifest.json" : "manifest_" + stem + ".json"));
    return 0;
  }

  std::vector<GlyphSample> dataset() {
    const std::string path = cfg.path("data.train");
    manifest.input(path);
    return read_dataset(path);
  }
  Checkpoint checkpoint(const std::string& key) {
    const std::string path = cfg.path(key);
    manifest.input(path);
    return Checkpoint::load(path);
  }
  Autoencoder autoencoder() { return Autoencoder::load(checkpoint("ae.checkpoint")); }
  CheckpointSet probes() { return CheckpointSet::load(checkpoint("classifier.checkpoint")); }
  SemanticModel semantic() { return SemanticModel::load(checkpoint("sinn.checkpoint")); }

  std::string cinn_path(std::size_t snapshot) const {
    return (fs::path(cfg.path("cinn.dir")) / ("cinn_" + cfg.get("cinn.tap") + "_ckpt" + std::to_string(snapshot) + ".ckpt"))
        .string();
  }
  InvarianceModel invariance(std::size_t snapshot) {
    const std::string path = cinn_path(snapshot);
    manifest.input(path);
    return InvarianceModel::load(Checkpoint::load(path));
  }

  // Evaluation inputs come from the tail of the dataset (the classifier's held-out rows).
  std::vector<std::size_t> tail(std::size_t n, std::size_t size) const {
    if (n > size) throw ConfigError(0, "count", "requested " + std::to_string(n) + " inputs, dataset has " + std::to_string(size));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = size - n + i;
    return idx;
  }

  SamplingConfig sampling() const {
    return {.n_outer = cfg.count("metrics.n_outer"),
            .n_inner = cfg.count("metrics.n_inner"),
            .seed = cfg.seed("metrics.seed"),
            .threads = worker_threads()};
  }
};

std::string serialize(const auto& model) {
  Checkpoint c;
  model.save(c);
  return c.serialize();
}

AdamConfig adam(const RunConfig& cfg, const std::string& section) {
  return AdamConfig{.lr = cfg.number(section + ".lr")};
}

int synth_data(RunConfig cfg, const Overrides& o) {
  const std::string path = o.out ? *o.out : cfg.path("data.train");
  Manifest manifest("synth-data", cfg);
  manifest.output(path, encode_dataset(gen_dataset(cfg.seed("data.seed"), cfg.count("data.count"))));
  manifest.finish(path + ".manifest.json");
  return 0;
}

int train_ae_cmd(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto data = ctx.dataset();
  AeConfig ac;
  ac.latent = cfg.count("ae.latent");
  ac.encoder_hidden = cfg.sizes("ae.encoder_hidden");
  ac.decoder_hidden = cfg.sizes("ae.decoder_hidden");
  ac.gamma_per_pixel = cfg.flag("ae.gamma_per_pixel");
  AeTrainConfig tc{.steps = cfg.count("ae.steps"),
                   .batch = cfg.count("ae.batch"),
                   .adam = adam(cfg, "ae"),
                   .gamma_lr = cfg.number("ae.gamma_lr"),
                   .seed = cfg.seed("ae.seed")};
  Rng init(tc.seed);
  Autoencoder model(ac, init);
  const auto rows = train_ae(model, data, tc);
  ctx.emit("ae.ckpt", serialize(model));
  ctx.emit("loss.csv", loss_csv(rows));
  return ctx.finish();
}

int train_classifier_cmd(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto data = ctx.dataset();
  const std::size_t held = cfg.count("classifier.heldout");
  if (held == 0 || held >= data.size())
    throw ConfigError(0, "classifier.heldout", "classifier.heldout must be between 1 and the dataset size - 1");
  const std::vector<GlyphSample> train(data.begin(), data.end() - static_cast<std::ptrdiff_t>(held));
  const std::vector<GlyphSample> heldout(data.end() - static_cast<std::ptrdiff_t>(held), data.end());
  ProbeConfig pc;
  pc.hidden = cfg.sizes("classifier.hidden");
  ProbeTrainConfig tc{.steps = cfg.count("classifier.steps"),
                      .batch = cfg.count("classifier.batch"),
                      .adam = adam(cfg, "classifier"),
                      .checkpoints = cfg.count("classifier.checkpoints"),
                      .seed = cfg.seed("classifier.seed")};
  Rng init(tc.seed);
  Probe probe(pc, init);
  const CheckpointSet set = train_classifier(probe, train, heldout, tc);
  ctx.emit("probe.ckpt", serialize(set));
  ctx.emit("accuracy.csv", set.accuracy_csv());
  return ctx.finish();
}

InvarianceConfig invariance_config(const RunConfig& cfg, std::size_t latent, std::size_t cond_dim) {
  return {.latent = latent,
          .cond_dim = cond_dim,
          .tap = cfg.get("cinn.tap"),
          .embed_hidden = cfg.count("cinn.embed_hidden"),
          .embed_out = cfg.count("cinn.embed_out"),
          .blocks = cfg.count("cinn.blocks"),
          .hidden_width = cfg.count("cinn.hidden_width"),
          .hidden_depth = cfg.count("cinn.hidden_depth"),
          .clamp = cfg.number("cinn.clamp")};
}

int train_cinn_cmd(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Tensor images = images_tensor(ctx.dataset());
  const Autoencoder ae = ctx.autoencoder();
  const CheckpointSet set = ctx.probes();
  std::vector<std::size_t> which;
  if (cfg.get("cinn.checkpoint") == "all") {
    for (std::size_t i = 0; i < set.size(); ++i) which.push_back(i);
  } else {
    which.push_back(set.resolve(cfg.get("cinn.checkpoint")));
  }
  const CinnTrainConfig tc{.steps = cfg.count("cinn.steps"),
                           .batch = cfg.count("cinn.batch"),
                           .adam = adam(cfg, "cinn"),
                           .final_lr_fraction = cfg.number("cinn.final_lr_fraction"),
                           .init_batch = cfg.count("cinn.init_batch"),
                           .seed = cfg.seed("cinn.seed")};
  const std::string& tap = cfg.get("cinn.tap");
  for (std::size_t i : which) {
    const Probe probe = set.model(i);
    Rng init(tc.seed);
    InvarianceModel t(invariance_config(cfg, ae.config().latent, probe.tap_dim(tap)), init);
    const auto rows = train_cinn(t, images, ae, probe, tc);
    const std::string stem = tap + "_ckpt" + std::to_string(i);
    ctx.emit("cinn_" + stem + ".ckpt", serialize(t));
    ctx.emit("nll_" + stem + ".csv", nll_csv(rows));
    std::cerr << "trained t for " << stem << ", final nll " << rows.back().nll << "\n";
  }
  return ctx.finish(tap + "_" + cfg.get("cinn.checkpoint"));
}

int train_sinn_cmd(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Autoencoder ae = ctx.autoencoder();
  SemanticConfig sc;
  sc.latent = ae.config().latent;
  sc.concept_dims = cfg.sizes("sinn.concept_dims");
  sc.rho = cfg.number("sinn.rho");
  sc.blocks = cfg.count("sinn.blocks");
  sc.hidden_width = cfg.count("sinn.hidden_width");
  sc.hidden_depth = cfg.count("sinn.hidden_depth");
  sc.clamp = cfg.number("sinn.clamp");
  const SinnTrainConfig tc{.steps = cfg.count("sinn.steps"),
                           .batch = cfg.count("sinn.batch"),
                           .adam = adam(cfg, "sinn"),
                           .final_lr_fraction = cfg.number("sinn.final_lr_fraction"),
                           .init_batch = cfg.count("sinn.init_batch"),
                           .seed = cfg.seed("sinn.seed")};
  Rng init(tc.seed);
  SemanticModel e(sc, init);
  const auto rows = train_sinn(e, ae, tc);
  ctx.emit("sinn.ckpt", serialize(e));
  ctx.emit("pair_loss.csv", pair_csv(rows));
  return ctx.finish();
}

int sample_cmd(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto data = ctx.dataset();
  const Autoencoder ae = ctx.autoencoder();
  const CheckpointSet set = ctx.probes();
  const std::size_t snap = set.resolve(cfg.get("cinn.checkpoint"));
  const InvarianceModel t = ctx.invariance(snap);
  const Probe probe = set.model(snap);
  const Tensor x = images_tensor(data, ctx.tail(cfg.count("sample.count"), data.size()));
  const Tensor z = probe.forward_with_tap(x, t.config().tap, nullptr);
  const Rng root(cfg.seed("sample.seed"));
  std::vector<std::vector<std::vector<double>>> grid(x.dim(0));
  parallel_for(x.dim(0), worker_threads(), [&](std::size_t i) {
    Rng rng = root.derive(i);
    const Tensor decoded = ae.decode(sample_zbar(t, row_slice(z, i, i + 1), rng, cfg.count("sample.draws")).zbar, nullptr);
    grid[i].push_back(image_row(x, i));
    for (std::size_t d = 0; d < decoded.dim(0); ++d) grid[i].push_back(image_row(decoded, d));
  });
  const std::string stem = "samples_" + t.config().tap + "_ckpt" + std::to_string(snap);
  ctx.emit(stem + ".ppm", encode_grid(grid, kImageSide));
  return ctx.finish(stem);
}

int metrics_cmd(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const std::string kind = cfg.get("metrics.kind");
  if (kind != "explained-by-invariances" && kind != "explained-by-z" && kind != "variance-proxy")
    throw ConfigError(0, "metrics.kind",
                      "unknown metrics kind '" + kind + "' (expected explained-by-invariances, explained-by-z or variance-proxy)");
  const Tensor images = images_tensor(ctx.dataset());
  const CheckpointSet set = ctx.probes();
  const std::size_t snap = set.resolve(cfg.get("cinn.checkpoint"));
  const InvarianceModel t = ctx.invariance(snap);
  const Tensor reps = representations(set.model(snap), t.config().tap, images);
  const std::string stem = kind + "_" + t.config().tap + "_ckpt" + std::to_string(snap);
  std::string csv;
  if (kind == "explained-by-invariances") {
    csv = report_csv({explained_by_invariances(t, reps, ctx.sampling())});
  } else if (kind == "explained-by-z") {
    const SemanticModel e = ctx.semantic();
    std::vector<VarianceReport> reports;
    const std::string factor = cfg.get("metrics.factor");
    for (std::size_t f = 0; f < e.layout().count(); ++f)
      if (factor == "all" || factor_id(factor) == f) reports.push_back(explained_by_representation(t, e, reps, f, ctx.sampling()));
    csv = report_csv(reports);
  } else {
    const Autoencoder ae = ctx.autoencoder();
    SamplingConfig sc = ctx.sampling();
    sc.n_outer = cfg.count("metrics.inputs");
    sc.n_inner = cfg.count("metrics.samples");
    const double proxy = variance_proxy(t, [&](const Tensor& zbar) { return ae.decode(zbar, nullptr); }, reps, sc);
    csv = "tap,checkpoint,proxy,inputs,samples,seed\n" + t.config().tap + ",ckpt" + std::to_string(snap) + "," +
          format_double(proxy) + "," + std::to_string(sc.n_outer) + "," + std::to_string(sc.n_inner) + "," +
          std::to_string(sc.seed) + "\n";
  }
  ctx.emit(stem + ".csv", csv);
  std::cout << csv;
  return ctx.finish(stem);
}

int attack_cmd(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto data = ctx.dataset();
  const Autoencoder ae = ctx.autoencoder();
  const CheckpointSet set = ctx.probes();
  const std::size_t snap = set.resolve(cfg.get("cinn.checkpoint"));
  const InvarianceModel t = ctx.invariance(snap);
  const Probe probe = set.model(snap);
  const auto idx = ctx.tail(cfg.count("attack.count"), data.size());
  const Tensor x = images_tensor(data, idx);
  std::vector<std::size_t> truth;
  for (std::size_t i : idx) truth.push_back(data[i].class_id);
  const auto targets = attack_targets(probe, x, truth, parse_target_rule(cfg.get("attack.target")));
  const double eps = cfg.number("attack.eps");
  const AttackRecord rec = attack_visualize(t, probe, ae, x, targets, eps);
  const auto adv = predict(probe, rec.x_adv);
  const auto dec = predict(probe, rec.decoded);
  std::string rows = "index,label,target,adv_class,decoded_class\n";
  std::size_t adv_hits = 0, dec_hits = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    adv_hits += adv[k] == targets[k];
    dec_hits += dec[k] == targets[k];
    rows += std::to_string(idx[k]) + "," + std::to_string(data[idx[k]].class_id) + "," + std::to_string(targets[k]) + "," +
            std::to_string(adv[k]) + "," + std::to_string(dec[k]) + "\n";
  }
  const double n = static_cast<double>(idx.size());
  const std::string stem = t.config().tap + "_ckpt" + std::to_string(snap);
  const std::string summary = "tap,eps,count,adv_flip_rate,decoded_flip_rate\n" + t.config().tap + "," + format_double(eps) +
                              "," + std::to_string(idx.size()) + "," + format_double(adv_hits / n) + "," +
                              format_double(dec_hits / n) + "\n";
  std::vector<std::vector<std::vector<double>>> grid;
  for (std::size_t k = 0; k < std::min(cfg.count("attack.grid"), idx.size()); ++k)
    grid.push_back({image_row(rec.x, k), image_row(rec.x_adv, k), image_row(rec.recon, k), image_row(rec.decoded, k)});
  ctx.emit("attack_" + stem + ".csv", rows);
  ctx.emit("attack_summary_" + stem + ".csv", summary);
  if (!grid.empty()) ctx.emit("attack_" + stem + ".ppm", encode_grid(grid, kImageSide));
  std::cout << summary;
  return ctx.finish("attack_" + stem);
}

int modify_cmd(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto data = ctx.dataset();
  const Autoencoder ae = ctx.autoencoder();
  const SemanticModel e = ctx.semantic();
  const std::size_t src = cfg.count("modify.src"), donor = cfg.count("modify.donor");
  if (src >= data.size() || donor >= data.size())
    throw ConfigError(0, "modify.src", "src/donor index out of range for a dataset of " + std::to_string(data.size()));
  const std::size_t factor = factor_id(cfg.get("modify.factor"));
  const Tensor x = images_tensor(data, {src, donor});
  const Tensor mu = ae.encode(x, nullptr).mu;
  const Tensor swapped = swap_factor(e, row_slice(mu, 0, 1), row_slice(mu, 1, 2), factor);
  const Tensor decoded = ae.decode(swapped, nullptr);
  const Rgb border = border_mean_color(decoded.values());
  double dist = 0.0;
  for (std::size_t c = 0; c < 3; ++c) dist = std::max(dist, std::abs(static_cast<double>(border[c] - data[donor].bg[c])));
  nlohmann::ordered_json j;
  j["src"] = src;
  j["donor"] = donor;
  j["factor"] = kFactorNames[factor];
  j["src_bg"] = data[src].bg;
  j["donor_bg"] = data[donor].bg;
  j["modified_border_mean"] = border;
  j["bg_distance_linf"] = dist;
  ctx.emit("src.ppm", encode_grid({{image_row(x, 0)}}, kImageSide));
  ctx.emit("donor.ppm", encode_grid({{image_row(x, 1)}}, kImageSide));
  ctx.emit("modified.ppm", encode_grid({{image_row(decoded, 0)}}, kImageSide));
  ctx.emit("modify.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return ctx.finish();
}

int factor_evolution_cmd(Context& ctx) {
  const Tensor images = images_tensor(ctx.dataset());
  const CheckpointSet set = ctx.probes();
  const SemanticModel e = ctx.semantic();
  std::vector<std::optional<InvarianceModel>> ts(set.size());
  for (std::size_t i = 0; i < set.size(); ++i)
    if (fs::is_regular_file(ctx.cinn_path(i))) ts[i] = ctx.invariance(i);
  const auto rows = factor_evolution(set, ts, e, images, ctx.sampling());
  ctx.emit("evolution_" + ctx.cfg.get("cinn.tap") + ".csv", evolution_csv(rows));
  std::string summary = "factor,spearman_vs_accuracy,checkpoints\n";
  if (rows.size() >= 2) {
    std::vector<double> acc;
    for (const auto& r : rows) acc.push_back(r.accuracy);
    for (std::size_t f = 0; f < rows.front().factors.size(); ++f) {
      std::vector<double> curve;
      for (const auto& r : rows) curve.push_back(r.factors[f].ratio);
      summary += std::string(kFactorNames[f]) + "," + format_double(spearman(curve, acc)) + "," +
                 std::to_string(rows.size()) + "\n";
    }
  }
  ctx.emit("spearman_" + ctx.cfg.get("cinn.tap") + ".csv", summary);
  std::cout << evolution_csv(rows) << summary;
  return ctx.finish(ctx.cfg.get("cinn.tap"));
}

}  // namespace

int run_command(const std::string& name, RunConfig cfg, const Overrides& o) {
  static const std::map<std::string, std::string> seed_key{
      {"synth-data", "data.seed"},       {"train-ae", "ae.seed"},       {"train-classifier", "classifier.seed"},
      {"train-cinn", "cinn.seed"},       {"train-sinn", "sinn.seed"},   {"sample", "sample.seed"},
      {"metrics", "metrics.seed"},       {"attack", "metrics.seed"},    {"modify", "metrics.seed"},
      {"factor-evolution", "metrics.seed"}};
  static const std::map<std::string, std::string> count_key{
      {"synth-data", "data.count"}, {"sample", "sample.count"}, {"attack", "attack.count"}};
  if (!seed_key.count(name)) throw ConfigError(0, name, "unknown command '" + name + "'");
  if (o.seed) cfg.set(seed_key.at(name), *o.seed);
  if (o.count) {
    if (!count_key.count(name)) throw ConfigError(0, "count", "--count does not apply to " + name);
    cfg.set(count_key.at(name), *o.count);
  }
  if (o.tap) cfg.set("cinn.tap", *o.tap);
  if (o.eps) cfg.set("attack.eps", *o.eps);
  if (o.checkpoint) cfg.set("cinn.checkpoint", *o.checkpoint);
  if (o.kind) cfg.set("metrics.kind", *o.kind);
  if (o.src) cfg.set("modify.src", *o.src);
  if (o.donor) cfg.set("modify.donor", *o.donor);
  if (o.factor) cfg.set(name == "modify" ? "modify.factor" : "metrics.factor", *o.factor);

  if (name == "synth-data") return synth_data(std::move(cfg), o);
  Context ctx(name, std::move(cfg), o.out);
  if (name == "train-ae") return train_ae_cmd(ctx);
  if (name == "train-classifier") return train_classifier_cmd(ctx);
  if (name == "train-cinn") return train_cinn_cmd(ctx);
  if (name == "train-sinn") return train_sinn_cmd(ctx);
  if (name == "sample") return sample_cmd(ctx);
  if (name == "metrics") return metrics_cmd(ctx);
  if (name == "attack") return attack_cmd(ctx);
  if (name == "modify") return modify_cmd(ctx);
  return factor_evolution_cmd(ctx);
}

}  // namespace invlens::cli
