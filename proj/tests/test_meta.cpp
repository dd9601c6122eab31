#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "ponp/harness.hpp"
#include "ponp/meta.hpp"

using namespace ponp;

namespace {

ConditionedField tiny_field(std::uint64_t seed = 5) {
  FieldConfig c;
  c.arch = FieldArch::relu_mlp;
  c.width = 8;
  c.depth = 2;
  c.in_dim = 2;
  c.out_dim = 1;
  return init_field(c, seed);
}

Episode tiny_ct_episode(int views, std::uint64_t seed) {
  CtEpisodeConfig cfg;
  cfg.resolution = 16;
  cfg.n_rays = 12;
  cfg.n_samples = 12;
  return make_ct_episode(gen_phantom(seed), views, seed, cfg);
}

std::vector<float> flatten(const ParamSet& p) {
  std::vector<float> out;
  for (const auto& [name, t] : p.items()) {
    out.insert(out.end(), t.values().begin(), t.values().end());
  }
  return out;
}

}  // namespace

TEST_CASE("maml: zero inner lr reduces to the plain multi-task gradient") {
  Episode e0 = tiny_ct_episode(2, 1);
  Episode e1 = tiny_ct_episode(4, 2);
  auto loss_fn = [&](const ParamSet& params, int task) {
    const Episode& ep = task % 2 == 0 ? e0 : e1;
    FieldConfig cfg = tiny_field().config;
    return context_sensor_mse(cfg, params, Tensor(), std::nullopt, ep.context);
  };

  MetaConfig mc;
  mc.inner_lr = 0.0f;
  mc.inner_steps = 2;
  mc.outer_batch = 2;
  mc.total_iterations = 1;
  mc.outer_lr = 1e-3f;

  ConditionedField maml_field = tiny_field(9);
  ParamSet maml_params = maml_field.params.clone();
  maml_train_generic(maml_params, loss_fn, mc);

  // reference: one Adam step on the averaged multi-task gradient
  ParamSet ref = maml_field.params.clone();
  Tensor total = add(loss_fn(ref, 0), loss_fn(ref, 1));
  backward(scale(total, 0.5f));
  OptimState st = make_adam_state(ref);
  adam_step(ref, collect_grads(ref), st, mc.outer_lr);

  auto a = flatten(maml_params), b = flatten(ref);
  float worst = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 1e-6f);
}

TEST_CASE("maml: one outer step is deterministic under a fixed seed") {
  auto run = []() {
    ConditionedField f = tiny_field(3);
    Episode ep = tiny_ct_episode(2, 7);
    MetaConfig mc;
    mc.inner_lr = 1e-2f;
    mc.inner_steps = 2;
    mc.outer_batch = 2;
    mc.total_iterations = 1;
    maml_train(f, [&](int) { return ep; }, mc);
    return flatten(f.params);
  };
  CHECK(run() == run());
}

TEST_CASE("maml: symmetric quadratic tasks pull the fixed point to zero") {
  // losses (theta - a)^2 and (theta + a)^2
  const float a = 2.0f;
  auto loss_fn = [&](const ParamSet& params, int task) {
    const float sign = task % 2 == 0 ? -1.0f : 1.0f;
    Tensor shifted = add_scalar(params.at("theta"), sign * a);
    return mean_all(square(shifted));
  };
  ParamSet p;
  p.add("theta", Tensor::full({1, 1}, 1.7f));
  MetaConfig mc;
  mc.inner_lr = 0.05f;
  mc.inner_steps = 2;
  mc.outer_batch = 2;
  mc.outer_lr = 0.05f;
  mc.total_iterations = 400;
  maml_train_generic(p, loss_fn, mc);
  CHECK(std::abs(p.at("theta").values()[0]) < 0.05f);
}

TEST_CASE("maml: first-order and second-order meta-gradients differ") {
  Episode ep = tiny_ct_episode(2, 11);
  auto run = [&](bool first_order) {
    ConditionedField f = tiny_field(13);
    MetaConfig mc;
    mc.inner_lr = 0.05f;  // large enough for the curvature term to matter
    mc.inner_steps = 2;
    mc.outer_batch = 1;
    mc.total_iterations = 1;
    mc.outer_lr = 1e-2f;
    mc.first_order = first_order;
    maml_train(f, [&](int) { return ep; }, mc);
    return flatten(f.params);
  };
  auto full = run(false), fo = run(true);
  float diff = 0.0f;
  for (size_t i = 0; i < full.size(); ++i) diff = std::max(diff, std::abs(full[i] - fo[i]));
  CHECK(diff > 1e-7f);
}

TEST_CASE("reptile") {
  SUBCASE("zero inner steps leave the initialization unchanged") {
    ConditionedField f = tiny_field(17);
    auto before = flatten(f.params);
    MetaConfig mc;
    mc.algorithm = MetaAlgo::reptile;
    mc.inner_steps = 0;
    mc.outer_batch = 2;
    mc.total_iterations = 3;
    mc.outer_lr = 0.5f;
    Episode ep = tiny_ct_episode(1, 3);
    reptile_train(f, [&](int) { return ep; }, mc);
    CHECK(before == flatten(f.params));
  }
  SUBCASE("repeated single-task training approaches that task's optimum") {
    ConditionedField f = tiny_field(19);
    Episode ep = tiny_ct_episode(4, 23);
    FieldConfig cfg = f.config;
    auto eval_loss = [&]() {
      return context_sensor_mse(cfg, f.params, Tensor(), std::nullopt, ep.context)
          .item();
    };
    const float before = eval_loss();
    MetaConfig mc;
    mc.algorithm = MetaAlgo::reptile;
    mc.inner_steps = 10;
    mc.inner_lr = 1e-2f;
    mc.outer_batch = 1;
    mc.outer_lr = 0.7f;
    mc.total_iterations = 40;
    std::vector<float> curve;
    reptile_train(f, [&](int) { return ep; }, mc,
                  [&](int, float loss) { curve.push_back(loss); });
    const float after = eval_loss();
    CHECK(after < before * 0.5f);
    // smoothed early loss above smoothed late loss
    float early = 0, late = 0;
    for (int i = 0; i < 5; ++i) {
      early += curve[static_cast<size_t>(i)];
      late += curve[curve.size() - 1 - static_cast<size_t>(i)];
    }
    CHECK(late < early);
  }
  SUBCASE("determinism under a fixed seed") {
    auto run = []() {
      ConditionedField f = tiny_field(29);
      Episode ep = tiny_ct_episode(2, 5);
      MetaConfig mc;
      mc.algorithm = MetaAlgo::reptile;
      mc.inner_steps = 3;
      mc.outer_batch = 2;
      mc.total_iterations = 4;
      mc.outer_lr = 0.3f;
      reptile_train(f, [&](int) { return ep; }, mc);
      return flatten(f.params);
    };
    CHECK(run() == run());
  }
}

TEST_CASE("test-time optimization") {
  ConditionedField f = tiny_field(31);
  Episode ep = tiny_ct_episode(2, 9);

  SUBCASE("zero steps returns an identical field (PSNR unchanged)") {
    ConditionedField adapted = test_time_optimize(f, std::nullopt, ep.context, 0);
    CHECK(flatten(adapted.params) == flatten(f.params));
    Tensor a = f(ep.target_coords, std::nullopt).mean;
    Tensor b = adapted(ep.target_coords, std::nullopt).mean;
    CHECK(psnr(a, ep.gt_grid) == psnr(b, ep.gt_grid));
  }
  SUBCASE("the original field is untouched by adaptation") {
    auto before = flatten(f.params);
    test_time_optimize(f, std::nullopt, ep.context, 20, 1e-2f);
    CHECK(before == flatten(f.params));
  }
  SUBCASE("context MSE is non-increasing up to small transients") {
    std::vector<float> curve;
    test_time_optimize(f, std::nullopt, ep.context, 150, 1e-2f,
                       [&](int, float loss) { curve.push_back(loss); });
    int violations = 0;
    for (size_t i = 10; i + 10 < curve.size(); i += 10) {
      if (curve[i + 10] > curve[i] * 1.05f) ++violations;
    }
    CHECK(violations == 0);
    CHECK(curve.back() < curve.front());
  }
  SUBCASE("published CT step budgets per view count") {
    CHECK(ct_tto_steps(1) == 50);
    CHECK(ct_tto_steps(2) == 100);
    CHECK(ct_tto_steps(4) == 1000);
    CHECK(ct_tto_steps(8) == 1000);
  }
}
