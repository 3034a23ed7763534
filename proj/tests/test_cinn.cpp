#include <cmath>
#include <numbers>

#include "doctest.h"
#include "invlens/checkpoint.hpp"
#include "invlens/cinn.hpp"
#include "invlens/grad_check.hpp"
#include "oracles.hpp"

using namespace invlens;

namespace {

InvarianceConfig small_config(std::size_t latent, std::size_t cond) {
  InvarianceConfig c;
  c.latent = latent;
  c.cond_dim = cond;
  c.embed_hidden = 32;
  c.embed_out = 8;
  c.blocks = 4;
  c.hidden_width = 64;
  c.hidden_depth = 2;
  return c;
}

struct World {
  Rng rng{40};
  oracles::LinearGaussianWorld world{4, 2, 4, rng};
  Tensor z, zbar, hz, hzbar;
  InvarianceModel model;
  std::vector<NllRow> rows;
  double identity_nll = 0.0;
  World() {
    std::tie(z, zbar) = world.sample(rng, 200000);
    std::tie(hz, hzbar) = world.sample(rng, 2000);
    Rng init(41);
    InvarianceConfig cfg = small_config(4, 2);
    cfg.hidden_width = 32;
    model = InvarianceModel(cfg, init);
    CinnTrainConfig tc;
    tc.steps = 4000;
    tc.batch = 256;
    tc.adam.lr = 1e-3;
    tc.final_lr_fraction = 0.05;
    InvarianceModel identity = model;
    identity.initialize(row_slice(zbar, 0, 512), row_slice(z, 0, 512), z);
    identity.set_identity();
    identity_nll = mean_nll(identity, hzbar, hz);
    rows = train_cinn(model, CinnData{zbar, std::nullopt, z}, tc);
  }
};

const World& world() {
  static const World w;
  return w;
}

}  // namespace

TEST_CASE("identity flow NLL at the mode and on a Gaussian batch") {
  InvarianceConfig cfg = small_config(64, 5);
  cfg.hidden_width = 16;
  Rng rng(1);
  InvarianceModel m(cfg, rng);
  m.set_identity();
  const Tensor z = rng.normal_tensor({3, 5});
  const double mode = 32.0 * std::log(2.0 * std::numbers::pi);
  const Tensor at_mode = nll(m, Tensor::zeros({3, 64}), z, nullptr);
  for (double v : at_mode.values()) CHECK(v == doctest::Approx(mode).epsilon(1e-12));
  CHECK(mode == doctest::Approx(58.81).epsilon(1e-3));

  double total = 0.0;
  const std::size_t chunks = 20, rows = 5000;
  for (std::size_t c = 0; c < chunks; ++c) {
    const Tensor x = rng.normal_tensor({rows, 64});
    total += sum(nll(m, x, rng.normal_tensor({rows, 5}), nullptr)).item();
  }
  const double n = static_cast<double>(chunks * rows);
  // sd of 0.5 |eps|^2 is sqrt(N / 2)
  CHECK(std::abs(total / n - (32.0 + mode)) < 4.0 * std::sqrt(32.0) / std::sqrt(n));
}

TEST_CASE("nll gradient matches finite differences") {
  Rng rng(2);
  InvarianceConfig cfg = small_config(6, 3);
  cfg.blocks = 2;
  cfg.hidden_width = 8;
  cfg.embed_hidden = 6;
  cfg.embed_out = 4;
  InvarianceModel m(cfg, rng);
  const Tensor zbar = rng.normal_tensor({5, 6});
  const Tensor z = rng.normal_tensor({5, 3});
  m.initialize(zbar, z, z);
  oracles::randomize(m.parameters(), rng, 0.3);
  CHECK(grad_check([&](Tape* t) { return mean(nll(m, zbar, z, t)); }, m.parameters()) < 1e-5);
}

TEST_CASE("sampled zbar maps back to the drawn v") {
  Rng rng(3);
  InvarianceModel m(small_config(8, 3), rng);
  const Tensor zbar = rng.normal_tensor({64, 8});
  const Tensor z = rng.normal_tensor({64, 3});
  m.initialize(zbar, z, z);
  oracles::randomize(m.parameters(), rng, 0.2);
  const Tensor zrow = row_slice(z, 0, 1);
  const ZbarDraws d = sample_zbar(m, zrow, rng, 50);
  const Tensor v = recover_v(m, d.zbar, repeat_row(zrow, 50));
  double worst = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(v[i] - d.v[i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("linear-Gaussian world: conditional samples match the closed form") {
  const auto& w = world();
  const double final_nll = mean_nll(w.model, w.hzbar, w.hz);
  const double optimum = 0.5 * oracles::log_abs_det(w.world.cov_given()) + 2.0 * std::log(2.0 * std::numbers::pi) + 2.0;
  MESSAGE("held-out NLL identity " << w.identity_nll << " -> trained " << final_nll << " (optimum " << optimum << ")");
  CHECK(final_nll < w.identity_nll);

  Rng rng(42);
  const auto cov = w.world.cov_given();
  double worst_mean = 0.0, worst_cov = 0.0;
  for (int t = 0; t < 5; ++t) {
    const std::vector<double> zv{rng.normal(), rng.normal()};
    const Tensor zrow = Tensor({1, 2}, zv);
    const ZbarDraws d = sample_zbar(w.model, zrow, rng, 20000);
    const auto m = oracles::column_means(d.zbar);
    const auto c = oracles::column_cov(d.zbar);
    const auto em = w.world.mean_given(zv);
    for (std::size_t i = 0; i < 4; ++i) {
      worst_mean = std::max(worst_mean, std::abs(m[i] - em[i]));
      for (std::size_t k = 0; k < 4; ++k) worst_cov = std::max(worst_cov, std::abs(c[i][k] - cov[i][k]));
    }
  }
  MESSAGE("worst mean error " << worst_mean << ", worst covariance error " << worst_cov);
  CHECK(worst_mean < 0.1);
  CHECK(worst_cov < 0.15);
}

TEST_CASE("linear-Gaussian world: invariances are Gaussian and independent of z") {
  const auto& w = world();
  const Tensor v = recover_v(w.model, w.hzbar, w.hz);
  const auto m = oracles::column_means(v);
  const auto c = oracles::column_cov(v);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(m[i]) < 0.1);
    CHECK(std::abs(c[i][i] - 1.0) < 0.15);
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(std::abs(oracles::pearson(oracles::column(v, i), oracles::column(w.hz, j))) < 0.1);
  }

  // two inputs with identical z but different u
  Rng rng(43);
  const std::vector<double> zv{0.3, -0.7};
  std::vector<double> a = w.world.mean_given(zv), b = a;
  for (std::size_t i = 0; i < 4; ++i) {
    a[i] += w.world.a[i][2] * 1.0;
    b[i] += w.world.a[i][3] * -1.0;
  }
  const Tensor z2 = repeat_row(Tensor({1, 2}, zv), 2);
  std::vector<double> both(a);
  both.insert(both.end(), b.begin(), b.end());
  const Tensor vv = recover_v(w.model, Tensor({2, 4}, both), z2);
  double diff = 0.0;
  for (std::size_t i = 0; i < 4; ++i) diff = std::max(diff, std::abs(vv.at(0, i) - vv.at(1, i)));
  CHECK(diff > 0.1);
}

TEST_CASE("reloaded model reproduces held-out NLL exactly") {
  const auto& w = world();
  Checkpoint ck;
  w.model.save(ck);
  const InvarianceModel back = InvarianceModel::load(Checkpoint::deserialize(ck.serialize()));
  CHECK(mean_nll(back, w.hzbar, w.hz) == mean_nll(w.model, w.hzbar, w.hz));
  Checkpoint again;
  back.save(again);
  CHECK(again.serialize() == ck.serialize());
}

TEST_CASE("glyph entry point leaves encoder and probe untouched") {
  Rng rng(5);
  AeConfig ac;
  ac.encoder_hidden = {32};
  ac.decoder_hidden = {32};
  ac.latent = 8;
  Autoencoder ae(ac, rng);
  oracles::randomize(ae.parameters(), rng, 0.05);
  ProbeConfig pc;
  pc.hidden = {16, 8};
  Probe probe(pc, rng);
  InvarianceConfig ic = small_config(8, 8);
  ic.tap = "tap1";
  InvarianceModel m(ic, rng);
  const auto before = parameter_hash(ae.parameters()) ^ parameter_hash(probe.parameters());
  CinnTrainConfig tc;
  tc.steps = 20;
  tc.batch = 16;
  tc.init_batch = 64;
  const auto rows = train_cinn(m, images_tensor(gen_dataset(6, 128)), ae, probe, tc);
  CHECK(rows.size() == 20);
  CHECK((parameter_hash(ae.parameters()) ^ parameter_hash(probe.parameters())) == before);
  for (const auto& r : rows) CHECK(std::isfinite(r.nll));
}

TEST_CASE("non-finite loss restores the last snapshot") {
  Rng rng(7);
  InvarianceModel m(small_config(4, 2), rng);
  oracles::LinearGaussianWorld world(4, 2, 4, rng);
  auto [z, zbar] = world.sample(rng, 256);
  CinnTrainConfig tc;
  tc.steps = 200;
  tc.batch = 64;
  tc.init_batch = 32;
  tc.snapshot_every = 10;
  // poison a row that the actnorm initialization batch does not draw
  Rng replay = Rng(tc.seed).derive(0);
  std::vector<bool> used(256, false);
  for (std::size_t i = 0; i < tc.init_batch; ++i) used[static_cast<std::size_t>(replay.below(256))] = true;
  std::size_t row = 0;
  while (used[row]) ++row;
  std::vector<double> bad(zbar.values().begin(), zbar.values().end());
  bad[row * 4] = std::nan("");
  CinnData data{Tensor(zbar.shape(), bad), std::nullopt, z};
  CHECK_THROWS_AS(train_cinn(m, data, tc), TrainingError);
  for (const Parameter* p : m.parameters())
    for (double v : *p->value) REQUIRE(std::isfinite(v));
}
