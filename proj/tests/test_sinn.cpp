#include <cmath>

#include "doctest.h"
#include "invlens/checkpoint.hpp"
#include "invlens/grad_check.hpp"
#include "invlens/sinn.hpp"
#include "oracles.hpp"

using namespace invlens;

namespace {

SemanticConfig small_config() {
  SemanticConfig c;
  c.latent = 12;
  c.concept_dims = {2, 2, 2};
  c.blocks = 3;
  c.hidden_width = 16;
  return c;
}

SemanticModel random_model(Rng& rng, SemanticConfig cfg = small_config()) {
  SemanticModel m(cfg, rng);
  m.initialize(rng.normal_tensor({64, cfg.latent}));
  oracles::randomize(m.parameters(), rng, 0.2);
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::abs(a[i] - b[i]));
  return w;
}

}  // namespace

TEST_CASE("factor layout") {
  FactorLayout l(64, {8, 8, 8});
  CHECK(l.count() == 4);
  CHECK(l.dim(0) == 40);
  CHECK(l.begin(1) == 40);
  CHECK(l.end(3) == 64);
  for (std::size_t i = 1; i < l.count(); ++i) CHECK(l.begin(i) == l.end(i - 1));
  CHECK_THROWS_AS(FactorLayout(8, {4, 4}), DomainError);
  CHECK(factor_index(Concept::kClass) == 1);
  CHECK(factor_index(Concept::kBg) == 3);
}

TEST_CASE("identity flow without shuffle gives coordinate slices") {
  SemanticConfig cfg = small_config();
  cfg.shuffle = false;
  Rng rng(1);
  SemanticModel m(cfg, rng);
  m.set_identity();
  const Tensor z = rng.normal_tensor({5, 12});
  const auto f = m.factorize(z, nullptr);
  REQUIRE(f.size() == 4);
  std::size_t width = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    width += f[i].dim(1);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t k = 0; k < f[i].dim(1); ++k) CHECK(f[i].at(r, k) == z.at(r, m.layout().begin(i) + k));
  }
  CHECK(width == 12);
}

TEST_CASE("defactorize inverts factorize") {
  Rng rng(2);
  const SemanticModel m = random_model(rng);
  const Tensor z = rng.normal_tensor({50, 12});
  CHECK(max_abs_diff(m.defactorize(m.factorize(z, nullptr), nullptr), z) < 1e-9);
}

TEST_CASE("pair loss closed-form values") {
  Rng rng(3);
  SemanticModel m(small_config(), rng);
  m.set_identity();
  const Tensor zero = Tensor::zeros({2, 12});
  for (std::size_t i = 1; i <= 3; ++i) {
    const Tensor l = pair_nll(m, zero, zero, i, nullptr);
    for (double v : l.values()) CHECK(v == 0.0);
  }

  // identity flow, e^a = e^b supported on I_i
  SemanticConfig cfg = small_config();
  cfg.shuffle = false;
  SemanticModel plain(cfg, rng);
  plain.set_identity();
  std::vector<double> e(12, 0.0);
  double sq = 0.0;
  for (std::size_t k = plain.layout().begin(2); k < plain.layout().end(2); ++k) {
    e[k] = rng.normal();
    sq += e[k] * e[k];
  }
  const Tensor t({1, 12}, e);
  const double expect = 0.5 * ((0.1 / 1.9) * sq + sq);
  CHECK(pair_nll(plain, t, t, 2, nullptr).item() == doctest::Approx(expect).epsilon(1e-13));
  CHECK_THROWS_AS(pair_nll(plain, t, t, 0, nullptr), DomainError);
}

TEST_CASE("pair loss matches a scalar evaluation of the formula") {
  Rng rng(4);
  const SemanticModel m = random_model(rng);
  const double rho = 0.9;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor za = rng.normal_tensor({3, 12});
    const Tensor zb = rng.normal_tensor({3, 12});
    const std::size_t i = 1 + rng.below(3);
    const Tensor got = pair_nll(m, za, zb, i, nullptr);
    const FlowOutput fa = m.forward(za, nullptr), fb = m.forward(zb, nullptr);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 12; ++k) {
        const double ea = fa.y.at(r, k), eb = fb.y.at(r, k);
        const bool in = k >= m.layout().begin(i) && k < m.layout().end(i);
        s += in ? (eb - rho * ea) * (eb - rho * ea) / (1.0 - rho * rho) : eb * eb;
        s += ea * ea;
      }
      const double expect = 0.5 * s - fa.logdet[r] - fb.logdet[r];
      CHECK(std::abs(got[r] - expect) < 1e-10);
    }
  }
}

TEST_CASE("pair loss gradient matches finite differences") {
  Rng rng(5);
  SemanticConfig cfg = small_config();
  cfg.latent = 8;
  cfg.concept_dims = {2, 2, 2};
  cfg.blocks = 2;
  cfg.hidden_width = 8;
  SemanticModel m = random_model(rng, cfg);
  const Tensor za = rng.normal_tensor({4, 8});
  const Tensor zb = rng.normal_tensor({4, 8});
  CHECK(grad_check([&](Tape* t) { return mean(pair_nll(m, za, zb, 2, t)); }, m.parameters()) < 1e-5);
}

TEST_CASE("factor swap") {
  Rng rng(6);
  const SemanticModel m = random_model(rng);
  const Tensor src = rng.normal_tensor({10, 12});
  const Tensor donor = rng.normal_tensor({10, 12});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(max_abs_diff(swap_factor(m, src, src, i), src) < 1e-9);
    const Tensor mod = swap_factor(m, src, donor, i);
    const Tensor back = swap_factor(m, mod, src, i);
    CHECK(max_abs_diff(back, src) < 1e-9);
    const auto fm = m.factorize(mod, nullptr);
    const auto fs = m.factorize(src, nullptr);
    const auto fd = m.factorize(donor, nullptr);
    CHECK(max_abs_diff(fm[i], fd[i]) < 1e-9);
    for (std::size_t j = 0; j < 4; ++j) {
      if (j == i) continue;
      CHECK(max_abs_diff(fm[j], fs[j]) < 1e-9);
    }
  }
}

TEST_CASE("short training is deterministic and lowers held-out pair loss") {
  Rng rng(7);
  AeConfig ac;
  ac.latent = 12;
  ac.encoder_hidden = {32};
  ac.decoder_hidden = {32};
  Autoencoder ae(ac, rng);
  oracles::randomize(ae.parameters(), rng, 0.05);

  SinnTrainConfig tc;
  tc.steps = 150;
  tc.batch = 32;
  tc.adam.lr = 1e-3;
  tc.init_batch = 128;

  Rng held(8);
  std::vector<GlyphSample> ha, hb;
  for (int i = 0; i < 300; ++i) {
    auto p = gen_pair(Concept::kBg, held);
    ha.push_back(p.a);
    hb.push_back(p.b);
  }
  Rng noise(10);
  const Tensor za = reparameterize(ae.encode(images_tensor(ha), nullptr), noise);
  const Tensor zb = reparameterize(ae.encode(images_tensor(hb), nullptr), noise);

  std::string csv[2], bytes[2];
  double before = 0.0, after = 0.0;
  for (int run = 0; run < 2; ++run) {
    Rng mr(9);
    SemanticModel m(small_config(), mr);
    SemanticModel untrained = m;
    SinnTrainConfig init_only = tc;
    init_only.steps = 0;
    train_sinn(untrained, ae, init_only);
    const auto rows = train_sinn(m, ae, tc);
    csv[run] = pair_csv(rows);
    Checkpoint ck;
    m.save(ck);
    bytes[run] = ck.serialize();
    if (run == 0) {
      before = mean(pair_nll(untrained, za, zb, 3, nullptr)).item();
      after = mean(pair_nll(m, za, zb, 3, nullptr)).item();
      const SemanticModel back = SemanticModel::load(ck);
      CHECK(mean(pair_nll(back, za, zb, 3, nullptr)).item() == after);
    }
  }
  MESSAGE("held-out bg pair loss " << before << " -> " << after);
  CHECK(after < before);
  CHECK(csv[0] == csv[1]);
  CHECK(bytes[0] == bytes[1]);
}
