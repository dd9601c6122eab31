#include <cmath>

#include "doctest.h"
#include "ponp/ops.hpp"
#include "ponp/optim.hpp"

using namespace ponp;

namespace {

ParamSet one_param(float v, int n = 4) {
  ParamSet p;
  p.add("w", Tensor::full({1, n}, v));
  return p;
}

std::vector<Tensor> unit_grads(const ParamSet& p, float g) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : p.items()) out.push_back(Tensor::full(t.shape(), g));
  return out;
}

}  // namespace

TEST_CASE("adam first step with unit gradient moves by ~-lr") {
  ParamSet p = one_param(0.5f);
  OptimState st = make_adam_state(p);
  adam_step(p, unit_grads(p, 1.0f), st, 0.1f);
  for (float v : p.at("w").values()) {
    CHECK(std::abs((v - 0.5f) + 0.1f) < 1e-6f);  // bias-corrected: delta = -lr
  }
  CHECK(st.step == 1);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  ParamSet p = one_param(0.25f);
  OptimState st = make_adam_state(p);
  adam_step(p, unit_grads(p, 0.0f), st, 0.1f);
  for (float v : p.at("w").values()) CHECK(v == 0.25f);
}

TEST_CASE("adam is deterministic: identical calls give bitwise-equal params") {
  auto run = []() {
    ParamSet p = one_param(1.0f, 8);
    OptimState st = make_adam_state(p);
    for (int i = 0; i < 3; ++i) adam_step(p, unit_grads(p, 0.3f), st, 0.05f);
    auto v = p.at("w").values();
    return std::vector<float>(v.begin(), v.end());
  };
  CHECK(run() == run());
}

TEST_CASE("sgd definition and zero-gradient case") {
  ParamSet p = one_param(1.0f);
  sgd_step(p, unit_grads(p, 2.0f), 0.01f);
  for (float v : p.at("w").values()) CHECK(v == doctest::Approx(0.98f));
  sgd_step(p, unit_grads(p, 0.0f), 0.01f);
  for (float v : p.at("w").values()) CHECK(v == doctest::Approx(0.98f));
}

TEST_CASE("sgd and adam steps differ on the unit-gradient case") {
  ParamSet ps = one_param(1.0f);
  ParamSet pa = one_param(1.0f);
  OptimState st = make_adam_state(pa);
  sgd_step(ps, unit_grads(ps, 1.0f), 0.1f);
  adam_step(pa, unit_grads(pa, 1.0f), st, 0.1f);
  // second identical step: sgd keeps moving by lr*g, adam by ~lr
  sgd_step(ps, unit_grads(ps, 0.5f), 0.1f);
  adam_step(pa, unit_grads(pa, 0.5f), st, 0.1f);
  CHECK(ps.at("w").values()[0] != pa.at("w").values()[0]);
}

TEST_CASE("shape mismatch is an error") {
  ParamSet p = one_param(1.0f);
  std::vector<Tensor> bad{Tensor::full({1, 3}, 1.0f)};
  OptimState st = make_adam_state(p);
  CHECK_THROWS_AS(adam_step(p, bad, st, 0.1f), ShapeError);
  CHECK_THROWS_AS(sgd_step(p, bad, 0.1f), ShapeError);
}

TEST_CASE("exponential lr decay endpoints and geometric midpoint") {
  CHECK(exp_decay_lr(0, 1000, 1e-3f, 1e-4f) == doctest::Approx(1e-3f));
  CHECK(exp_decay_lr(1000, 1000, 1e-3f, 1e-4f) == doctest::Approx(1e-4f));
  // geometric midpoint sqrt(lr0*lr1)
  CHECK(exp_decay_lr(500, 1000, 1e-3f, 1e-4f) ==
        doctest::Approx(3.16227766e-4f).epsilon(1e-4));
  CHECK_THROWS_AS(exp_decay_lr(1, 0, 1e-3f, 1e-4f), ConfigError);
}

TEST_CASE("param sets keep deterministic iteration order and unique names") {
  ParamSet p;
  p.add("b", Tensor::zeros({1}));
  p.add("a", Tensor::zeros({1}));
  p.add("c", Tensor::zeros({1}));
  CHECK(p.items()[0].first == "b");
  CHECK(p.items()[1].first == "a");
  CHECK(p.items()[2].first == "c");
  CHECK_THROWS_AS(p.add("a", Tensor::zeros({1})), ConfigError);

  ParamSet q = p.clone();
  CHECK(q.items()[1].first == "a");
  q.at("a").values_mut()[0] = 5.0f;
  CHECK(p.at("a").values()[0] == 0.0f);  // deep copy
}

TEST_CASE("identical seed and config give bitwise-identical trajectories") {
  auto run = []() {
    Rng rng(123);
    ParamSet p;
    p.add("w", Tensor::uniform({4, 4}, -1, 1, rng, true));
    Tensor x = Tensor::uniform({8, 4}, -1, 1, rng);
    OptimState st = make_adam_state(p);
    for (int step = 0; step < 100; ++step) {
      Tensor loss = mean_all(square(matmul(x, p.at("w"))));
      backward(loss);
      adam_step(p, collect_grads(p), st, 1e-2f);
      p.zero_grad();
    }
    auto v = p.at("w").values();
    return std::vector<float>(v.begin(), v.end());
  };
  CHECK(run() == run());
}
