#include <cmath>
#include <numbers>

#include "doctest.h"
#include "invlens/checkpoint.hpp"
#include "invlens/flow.hpp"
#include "invlens/grad_check.hpp"
#include "invlens/log.hpp"
#include "oracles.hpp"

using namespace invlens;

namespace {

FlowConfig small_config(std::size_t dim, std::size_t blocks, std::size_t cond = 0) {
  FlowConfig c;
  c.dim = dim;
  c.blocks = blocks;
  c.hidden_width = 16;
  c.hidden_depth = 2;
  c.cond_width = cond;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("zero-initialized stack is the identity") {
  Rng rng(1);
  FlowConfig cfg = small_config(8, 3);
  cfg.shuffle = false;
  FlowStack stack("f", cfg, rng);
  stack.set_identity();
  Tensor x = rng.normal_tensor({5, 8});
  FlowOutput out = stack.forward(x, std::nullopt, nullptr);
  CHECK(max_abs_diff(out.y, x) == 0.0);
  for (double v : out.logdet.values()) CHECK(v == 0.0);
  CHECK(max_abs_diff(stack.inverse(x, std::nullopt, nullptr), x) == 0.0);

  // With shuffling on, the map is the composition of the fixed permutations.
  Rng rng2(2);
  FlowStack shuffled("f", small_config(8, 3), rng2);
  shuffled.set_identity();
  Tensor expect = x;
  for (const FlowBlock& b : shuffled.blocks()) expect = b.shuffle.forward(expect);
  CHECK(max_abs_diff(shuffled.forward(x, std::nullopt, nullptr).y, expect) == 0.0);
}

TEST_CASE("uninitialized actnorm is a state error") {
  Rng rng(1);
  FlowStack stack("f", small_config(4, 2), rng);
  CHECK_FALSE(stack.initialized());
  CHECK_THROWS_AS(stack.forward(rng.normal_tensor({3, 4}), std::nullopt, nullptr), StateError);
}

TEST_CASE("odd dimension and conditioning mismatches are rejected") {
  Rng rng(1);
  CHECK_THROWS_AS(FlowStack("f", small_config(5, 1), rng), DimensionError);
  FlowStack cond("c", small_config(4, 1, 3), rng);
  cond.set_identity();
  CHECK_THROWS_AS(cond.forward(rng.normal_tensor({2, 4}), std::nullopt, nullptr), DimensionError);
  CHECK_THROWS_AS(cond.forward(rng.normal_tensor({2, 4}), rng.normal_tensor({3, 3}), nullptr), DimensionError);
}

TEST_CASE("log-det matches the numerical Jacobian") {
  for (std::size_t d : {2u, 4u, 6u, 8u}) {
    Rng rng(100 + d);
    FlowStack stack("f", small_config(d, 3, 2), rng);
    stack.set_identity();
    oracles::randomize(stack.parameters(), rng, 0.3);
    Tensor h = rng.normal_tensor({1, 2});
    Tensor x = rng.normal_tensor({1, d});
    const double logdet = stack.forward(x, h, nullptr).logdet[0];
    auto f = [&](const std::vector<double>& in) {
      Tensor y = stack.forward(Tensor({1, d}, in), h, nullptr).y;
      return std::vector<double>(y.values().begin(), y.values().end());
    };
    const double numeric = oracles::log_abs_det(oracles::numerical_jacobian(f, {x.values().begin(), x.values().end()}));
    INFO("d = " << d << " logdet " << logdet << " numeric " << numeric);
    CHECK(std::abs(logdet - numeric) / std::max(std::abs(logdet), 1e-300) < 1e-6);
  }
}

TEST_CASE("conditioning changes the output") {
  Rng rng(3);
  FlowStack stack("f", small_config(6, 2, 4), rng);
  stack.set_identity();
  oracles::randomize(stack.parameters(), rng, 0.2);
  Tensor x = rng.normal_tensor({2, 6});
  Tensor y1 = stack.forward(x, rng.normal_tensor({2, 4}), nullptr).y;
  Tensor y2 = stack.forward(x, rng.normal_tensor({2, 4}), nullptr).y;
  CHECK(max_abs_diff(y1, y2) > 0.0);
}

TEST_CASE("inverse round trip over 100 seeded inputs") {
  Rng rng(4);
  FlowStack stack("f", small_config(8, 4, 3), rng);
  stack.initialize(scale(rng.normal_tensor({32, 8}), 2.0), rng.normal_tensor({32, 3}));
  oracles::randomize(stack.parameters(), rng, 0.2);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng r(5000 + i);
    Tensor x = scale(r.normal_tensor({2, 8}), 1.5);
    Tensor h = r.normal_tensor({2, 3});
    worst = std::max(worst, max_abs_diff(stack.inverse(stack.forward(x, h, nullptr).y, h, nullptr), x));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("gradient through the inverse") {
  Rng rng(6);
  FlowStack stack("f", small_config(4, 2, 2), rng);
  stack.set_identity();
  oracles::randomize(stack.parameters(), rng, 0.3);
  Tensor h = rng.normal_tensor({3, 2});
  auto f = [&](const Tensor& y) { return sum(square(stack.inverse(y, h, y.tape()))); };
  CHECK(grad_check(f, rng.normal_tensor({3, 4})) < 1e-5);
}

TEST_CASE("coupling-block NLL gradient with respect to parameters") {
  Rng rng(7);
  FlowStack stack("f", small_config(6, 2, 3), rng);
  stack.initialize(rng.normal_tensor({16, 6}), rng.normal_tensor({16, 3}));
  oracles::randomize(stack.parameters(), rng, 0.2);
  Tensor x = rng.normal_tensor({4, 6});
  Tensor h = rng.normal_tensor({4, 3});
  auto f = [&](Tape* tape) { return mean(gaussian_nll(stack.forward(x, h, tape))); };
  CHECK(grad_check(f, stack.parameters()) < 1e-5);
}

TEST_CASE("actnorm data-dependent initialization") {
  Rng rng(8);
  SUBCASE("standardized batch gives identity parameters") {
    Tensor raw = rng.normal_tensor({64, 4});
    const std::size_t b = 64;
    Tensor z = (raw - broadcast_rows(mean(raw, 0), b)) * broadcast_rows(exp(scale(log(var(raw, 0)), -0.5)), b);
    ActNorm an("an", 4);
    an.initialize(z);
    for (double v : *an.log_scale.value) CHECK(std::abs(v) < 1e-12);
    for (double v : *an.shift.value) CHECK(std::abs(v) < 1e-12);
  }
  SUBCASE("constant coordinate is regularized with a warning") {
    std::vector<double> v(10 * 2);
    for (std::size_t i = 0; i < 10; ++i) {
      v[i * 2] = static_cast<double>(i);
      v[i * 2 + 1] = 3.0;
    }
    int warnings = 0;
    auto old = set_warning_sink([&](const std::string&) { ++warnings; });
    ActNorm an("an", 2);
    an.initialize(Tensor({10, 2}, v));
    set_warning_sink(old);
    CHECK(warnings == 1);
    CHECK(std::isfinite((*an.log_scale.value)[1]));
    CHECK((*an.log_scale.value)[1] == doctest::Approx(-0.5 * std::log(ActNorm::kVarianceFloor)));
  }
  SUBCASE("init batch is standardized at every actnorm output") {
    FlowStack stack("f", small_config(6, 3, 2), rng);
    for (FlowBlock& b : stack.blocks()) oracles::randomize(b.coupling.parameters(), rng, 0.3);
    Tensor batch = add_scalar(scale(rng.normal_tensor({50, 6}), 3.0), 1.5);
    Tensor h = rng.normal_tensor({50, 2});
    stack.initialize(batch, h);
    Tensor y = batch;
    for (const FlowBlock& b : stack.blocks()) {
      y = b.actnorm.forward(y, nullptr);
      Tensor m = mean(y, 0), v = var(y, 0);
      for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::abs(m[j]) < 1e-6);
        CHECK(std::abs(v[j] - 1.0) < 1e-6);
      }
      y = b.coupling.forward(b.shuffle.forward(y), h, nullptr).y;
    }
  }
  CHECK_THROWS_AS(ActNorm("an", 2).initialize(Tensor::zeros({1, 2})), DomainError);
}

TEST_CASE("log-det of a stack is the sum of per-layer log-dets") {
  Rng rng(9);
  FlowStack stack("f", small_config(4, 2, 2), rng);
  stack.initialize(rng.normal_tensor({20, 4}), rng.normal_tensor({20, 2}));
  oracles::randomize(stack.parameters(), rng, 0.3);
  Tensor x = rng.normal_tensor({3, 4});
  Tensor h = rng.normal_tensor({3, 2});
  FlowOutput whole = stack.forward(x, h, nullptr);
  Tensor y = x;
  Tensor total = Tensor::zeros({3});
  for (const FlowBlock& b : stack.blocks()) {
    y = b.actnorm.forward(y, nullptr);
    total = total + b.actnorm.logdet(3, nullptr);
    FlowOutput c = b.coupling.forward(b.shuffle.forward(y), h, nullptr);
    y = c.y;
    total = total + c.logdet;
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(whole.logdet[i] == total[i]);
}

TEST_CASE("identity stack gives the analytic standard-normal NLL") {
  Rng rng(10);
  FlowStack stack("f", small_config(8, 2, 3), rng);
  stack.set_identity();
  Tensor x = rng.normal_tensor({16, 8});
  Tensor nll = gaussian_nll(stack.forward(x, rng.normal_tensor({16, 3}), nullptr));
  for (std::size_t i = 0; i < 16; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 8; ++j) sq += x.at(i, j) * x.at(i, j);
    CHECK(std::abs(nll[i] - (0.5 * sq + 4.0 * std::log(2.0 * std::numbers::pi))) < 1e-8);
  }
}

TEST_CASE("stack checkpoint round trip is bit-exact") {
  Rng rng(11);
  FlowStack stack("f", small_config(6, 2, 2), rng);
  stack.initialize(rng.normal_tensor({20, 6}), rng.normal_tensor({20, 2}));
  oracles::randomize(stack.parameters(), rng, 0.3);
  Checkpoint c;
  stack.save(c);
  const std::string bytes = c.serialize();

  Rng other(999);
  FlowStack loaded("f", small_config(6, 2, 2), other);
  loaded.load(Checkpoint::deserialize(bytes));
  Checkpoint c2;
  loaded.save(c2);
  CHECK(c2.serialize() == bytes);
  Tensor x = rng.normal_tensor({3, 6});
  Tensor h = rng.normal_tensor({3, 2});
  CHECK(max_abs_diff(stack.forward(x, h, nullptr).y, loaded.forward(x, h, nullptr).y) == 0.0);
}

TEST_CASE("coupling scales stay within the clamp") {
  Rng rng(12);
  FlowConfig cfg = small_config(4, 1);
  cfg.clamp = 2.0;
  FlowStack stack("f", cfg, rng);
  stack.set_identity();
  AffineCoupling& c = stack.blocks()[0].coupling;
  oracles::randomize(c.subnet(0).parameters(), rng, 50.0);
  oracles::randomize(c.subnet(2).parameters(), rng, 50.0);
  oracles::randomize(c.subnet(1).parameters(), rng, 0.1);
  oracles::randomize(c.subnet(3).parameters(), rng, 0.1);
  Tensor x = scale(rng.normal_tensor({10, 4}), 10.0);
  FlowOutput out = stack.forward(x, std::nullopt, nullptr);
  // Two coupling stages, each half of width 2: |logdet| <= 2 * 2 * c.
  for (double v : out.logdet.values()) CHECK(std::abs(v - stack.blocks()[0].actnorm.logdet(1, nullptr)[0]) <= 8.0);
  CHECK(max_abs_diff(stack.inverse(out.y, std::nullopt, nullptr), x) < 1e-6);
}

TEST_CASE("condition embedding is deterministic and standardizes") {
  Rng rng(13);
  ConditionEmbedding emb("h", 5, 8, 3, rng);
  Tensor z = add_scalar(scale(rng.normal_tensor({40, 5}), 7.0), 20.0);
  emb.initialize(z);
  Tensor a = emb.forward(z, nullptr), b = emb.forward(z, nullptr);
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(a.shape() == Shape{40, 3});
  Checkpoint c;
  emb.save(c);
  Rng other(77);
  ConditionEmbedding loaded("h", 5, 8, 3, other);
  loaded.load(c);
  CHECK(max_abs_diff(loaded.forward(z, nullptr), a) == 0.0);
}
