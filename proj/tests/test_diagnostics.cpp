#include <cmath>
#include <optional>

#include "doctest.h"
#include "invlens/diagnostics.hpp"
#include "oracles.hpp"

using namespace invlens;

namespace {

// Groups x = m_g + e with m_g ~ N(0, s^2 I), e ~ N(0, I); true ratio 1 / (1 + s^2).
std::vector<Tensor> offset_groups(Rng& rng, std::size_t outer, std::size_t inner, std::size_t d, double s) {
  std::vector<Tensor> groups;
  for (std::size_t g = 0; g < outer; ++g) {
    std::vector<double> m(d);
    for (double& v : m) v = s * rng.normal();
    std::vector<double> x(inner * d);
    for (std::size_t i = 0; i < inner; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i * d + j] = m[j] + rng.normal();
    groups.push_back(Tensor({inner, d}, std::move(x)));
  }
  return groups;
}

InvarianceModel identity_cinn(std::size_t latent, std::size_t cond) {
  InvarianceConfig cfg;
  cfg.latent = latent;
  cfg.cond_dim = cond;
  cfg.blocks = 2;
  cfg.hidden_width = 16;
  cfg.embed_hidden = 16;
  cfg.embed_out = 4;
  Rng rng(5);
  InvarianceModel t(cfg, rng);
  t.set_identity();
  return t;
}

}  // namespace

TEST_CASE("variance ratio is invariant to rescaling") {
  Rng rng(1);
  const auto groups = offset_groups(rng, 50, 10, 3, 1.0);
  std::vector<Tensor> scaled;
  for (const auto& g : groups) scaled.push_back(g * 2.0);
  const auto a = variance_ratio(groups), b = variance_ratio(scaled);
  CHECK(std::abs(a.ratio - b.ratio) < 1e-10);
  CHECK(std::abs(a.standard_error - b.standard_error) < 1e-10);
}

TEST_CASE("variance ratio matches the offset model") {
  Rng rng(2);
  for (double s : {0.0, 1.0, 2.0}) {
    const auto r = variance_ratio(offset_groups(rng, 400, 20, 4, s));
    const double expected = 1.0 / (1.0 + s * s);
    CHECK(std::abs(r.ratio - expected) < 4.0 * r.standard_error + 0.02);
  }
}

TEST_CASE("constant groups give zero ratio, too few inner samples throw") {
  std::vector<Tensor> groups{Tensor::matrix(2, 1, {1, 1}), Tensor::matrix(2, 1, {3, 3})};
  CHECK(variance_ratio(groups).ratio == 0.0);
  CHECK_THROWS_AS(variance_ratio({Tensor::matrix(1, 1, {1})}), DomainError);
  const auto t = identity_cinn(4, 3);
  Rng rng(3);
  const Tensor reps = rng.normal_tensor({10, 3});
  CHECK_THROWS_AS(explained_by_invariances(t, reps, {.n_outer = 5, .n_inner = 1}), DomainError);
}

TEST_CASE("standard error shrinks as one over root n_outer") {
  double se_small = 0.0, se_large = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    se_small += variance_ratio(offset_groups(rng, 200, 10, 3, 1.0)).standard_error;
    se_large += variance_ratio(offset_groups(rng, 400, 10, 3, 1.0)).standard_error;
  }
  const double shrink = se_large / se_small;
  MESSAGE("SE ratio " << shrink);
  CHECK(shrink >= 0.6);
  CHECK(shrink <= 0.82);
}

TEST_CASE("identity invariance model: ratio near one, deterministic across threads") {
  const auto t = identity_cinn(6, 3);
  Rng rng(4);
  const Tensor reps = rng.normal_tensor({40, 3});
  SamplingConfig cfg{.n_outer = 300, .n_inner = 20, .seed = 9, .threads = 1};
  const auto one = explained_by_invariances(t, reps, cfg);
  CHECK(std::abs(one.ratio - 1.0) < 4.0 * one.standard_error + 0.02);
  cfg.threads = 3;
  const auto three = explained_by_invariances(t, reps, cfg);
  CHECK(one.ratio == three.ratio);
  CHECK(one.standard_error == three.standard_error);
  CHECK(report_csv({one}) == report_csv({three}));
}

TEST_CASE("representation ratio is zero when t ignores z") {
  const auto t = identity_cinn(6, 3);
  SemanticConfig scfg;
  scfg.latent = 6;
  scfg.concept_dims = {2, 1, 1};
  scfg.blocks = 1;
  scfg.hidden_width = 8;
  Rng rng(6);
  SemanticModel e(scfg, rng);
  e.set_identity();
  const Tensor reps = rng.normal_tensor({30, 3});
  for (std::size_t f = 0; f < 4; ++f) {
    const auto r = explained_by_representation(t, e, reps, f, {.n_outer = 20, .n_inner = 5, .seed = 2});
    CHECK(r.ratio == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("variance proxy with identity decoding equals the code-space numerator") {
  const auto t = identity_cinn(4, 2);
  Rng rng(7);
  const Tensor reps = rng.normal_tensor({15, 2});
  const SamplingConfig cfg{.n_outer = 30, .n_inner = 8, .seed = 4};
  const double proxy = variance_proxy(t, [](const Tensor& z) { return z; }, reps, cfg);
  CHECK(std::abs(proxy - explained_by_invariances(t, reps, cfg).numerator) < 1e-12);
  CHECK(variance_proxy(t, [](const Tensor& z) { return z; }, reps, {.n_outer = 3, .n_inner = 1}) == 0.0);
}

TEST_CASE("spearman with ties matches pearson of average ranks") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  const std::vector<double> a{1, 2, 3, 4, 5}, b{5, 6, 7, 8, 7};
  // b ranks: 1, 2, 3.5, 5, 3.5
  const double expected = oracles::pearson({1, 2, 3, 4, 5}, {1, 2, 3.5, 5, 3.5});
  CHECK(spearman(a, b) == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(spearman({1}, {1}), DomainError);
}

TEST_CASE("factor evolution skips checkpoints without an invariance model") {
  ProbeConfig pcfg;
  pcfg.input_dim = 4;
  pcfg.hidden = {6, 5, 3};
  Rng rng(8);
  Probe p(pcfg, rng);
  CheckpointSet set(pcfg);
  set.add(0, p, 0.25);
  set.add(10, p, 0.5);
  set.add(20, p, 0.75);
  SemanticConfig scfg;
  scfg.latent = 6;
  scfg.concept_dims = {2, 1, 1};
  scfg.blocks = 1;
  scfg.hidden_width = 8;
  SemanticModel e(scfg, rng);
  e.set_identity();
  std::vector<std::optional<InvarianceModel>> ts{identity_cinn(6, 3), std::nullopt, identity_cinn(6, 3)};
  const Tensor images = rng.normal_tensor({12, 4});
  const auto rows = factor_evolution(set, ts, e, images, {.n_outer = 4, .n_inner = 3, .seed = 1});
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].step == 20);
  CHECK(rows[1].factors.size() == 4);
  const std::string csv = evolution_csv(rows);
  CHECK(csv.rfind("checkpoint,step,accuracy,factor,ratio,se,n_outer,n_inner,seed\n", 0) == 0);
}

TEST_CASE("attack targets: next class and runner-up") {
  ProbeConfig pcfg;
  pcfg.input_dim = 4;
  pcfg.hidden = {6, 5, 3};
  Rng rng(12);
  Probe p(pcfg, rng);
  const Tensor x = rng.normal_tensor({20, 4});
  std::vector<std::size_t> labels(20);
  for (std::size_t i = 0; i < 20; ++i) labels[i] = i % 4;
  const auto next = attack_targets(p, x, labels, TargetRule::kNext);
  const auto runner = attack_targets(p, x, labels, TargetRule::kRunnerUp);
  const Tensor logits = p.forward(x, nullptr);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(next[i] == (labels[i] + 1) % 4);
    CHECK(runner[i] != labels[i]);
    for (std::size_t c = 0; c < 4; ++c)
      if (c != labels[i]) CHECK(logits.at(i, runner[i]) >= logits.at(i, c));
  }
  CHECK_THROWS_AS(parse_target_rule("nearest"), DomainError);
}

TEST_CASE("attack with eps 0 decodes to the reconstruction") {
  Rng rng(13);
  AeConfig ac;
  ac.input_dim = 6;
  ac.latent = 4;
  ac.encoder_hidden = {8};
  ac.decoder_hidden = {8};
  Autoencoder ae(ac, rng);
  oracles::randomize(ae.parameters(), rng, 0.2);
  ProbeConfig pcfg;
  pcfg.input_dim = 6;
  pcfg.hidden = {6, 5, 3};
  Probe p(pcfg, rng);
  InvarianceConfig icfg;
  icfg.latent = 4;
  icfg.cond_dim = 5;
  icfg.tap = "tap1";
  icfg.blocks = 2;
  icfg.hidden_width = 8;
  icfg.embed_hidden = 8;
  icfg.embed_out = 3;
  InvarianceModel t(icfg, rng);
  const Tensor x = tanh(rng.normal_tensor({5, 6}));
  t.initialize(ae.encode(x, nullptr).mu, p.forward_with_tap(x, "tap1", nullptr), p.forward_with_tap(x, "tap1", nullptr));
  oracles::randomize(t.parameters(), rng, 0.1);
  const AttackRecord rec = attack_visualize(t, p, ae, x, {1, 2, 3, 0, 1}, 0.0);
  for (std::size_t i = 0; i < rec.decoded.size(); ++i) CHECK(rec.decoded[i] == rec.recon[i]);
  // the recovered v reproduces the encoder mean
  const Tensor back = t.inverse(rec.v, p.forward_with_tap(x, "tap1", nullptr), nullptr);
  const Tensor mu = ae.encode(x, nullptr).mu;
  for (std::size_t i = 0; i < mu.size(); ++i) CHECK(std::abs(back[i] - mu[i]) < 1e-9);
}
