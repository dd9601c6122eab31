#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "ponp/ops.hpp"

using namespace ponp;
using ponp::testing::fd_gradient;
using ponp::testing::grads_close;

namespace {

Tensor rand_t(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f,
              bool rg = true) {
  return Tensor::uniform(std::move(shape), lo, hi, rng, rg);
}

std::vector<float> ad_grad(const Tensor& loss, Tensor param) {
  param.zero_grad();
  backward(loss);
  auto g = param.grad();
  return {g.begin(), g.end()};
}

}  // namespace

TEST_CASE("polynomial derivative: d(x*x)/dx = 2x") {
  Tensor x = Tensor::scalar(3.0f, true);
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(loss.item() == doctest::Approx(9.0f));
  CHECK(x.grad()[0] == doctest::Approx(6.0f));
}

TEST_CASE("analytic derivative: d(sin x)/dx at 0 = 1") {
  Tensor x = Tensor::scalar(0.0f, true);
  backward(sin(x));
  CHECK(x.grad()[0] == doctest::Approx(1.0f));
}

TEST_CASE("two-layer MLP gradients match central finite differences") {
  Rng rng(7);
  Tensor x = rand_t({4, 3}, rng, -1, 1, false);
  Tensor w1 = rand_t({3, 8}, rng);
  Tensor b1 = rand_t({1, 8}, rng);
  Tensor w2 = rand_t({8, 2}, rng);
  Tensor b2 = rand_t({1, 2}, rng);

  auto forward = [&]() {
    Tensor h = relu(add_rowvec(matmul(x, w1), b1));
    Tensor out = add_rowvec(matmul(h, w2), b2);
    return mean_all(square(out));
  };
  Tensor loss = forward();
  backward(loss);
  for (Tensor p : {w1, b1, w2, b2}) {
    auto fd = fd_gradient([&]() { return forward().item(); }, p);
    float worst = 0.0f;
    CHECK_MESSAGE(grads_close(p.grad(), fd, 1e-3f, 1e-5f, &worst),
                  "worst deviation " << worst);
  }
}

TEST_CASE("per-op gradient check vs finite differences") {
  Rng rng(11);
  // Micro checks weight the output by a fixed positive tensor so every
  // gradient entry stays O(0.1..1); input ranges avoid derivative zeros.
  // h = 1e-2 keeps the float32 evaluation noise well under the tolerance.
  const float h = 1e-2f;

  auto weighted = [&rng](const Tensor& out) {
    Rng wrng(31);
    Tensor w = Tensor::uniform(out.shape(), 0.5f, 1.5f, wrng);
    return sum_all(mul(out, w));
  };

  auto check_unary = [&](const char* name, auto op, float lo, float hi,
                         float floor = 1e-5f) {
    INFO(std::string(name));
    Tensor a = rand_t({3, 5}, rng, lo, hi);
    auto forward = [&]() { return weighted(op(a)); };
    Tensor loss = forward();
    auto ad = ad_grad(loss, a);
    auto fd = fd_gradient([&]() { return forward().item(); }, a, h);
    float worst = 0.0f;
    CHECK_MESSAGE(grads_close(ad, fd, 1e-3f, floor, &worst), "worst " << worst);
  };
  check_unary("relu", [](const Tensor& t) { return relu(t); }, 0.2f, 1.5f);
  check_unary("sin", [](const Tensor& t) { return sin(t); }, -0.9f, -0.3f);
  check_unary("cos", [](const Tensor& t) { return cos(t); }, 0.6f, 1.4f);
  check_unary("exp", [](const Tensor& t) { return exp(t); }, -1.0f, 1.0f);
  check_unary("log", [](const Tensor& t) { return log(t); }, 0.5f, 2.0f);
  check_unary("tanh", [](const Tensor& t) { return tanh(t); }, -1.0f, 1.0f);
  check_unary("softplus", [](const Tensor& t) { return softplus(t); }, -1.0f, 1.0f);
  check_unary("square", [](const Tensor& t) { return square(t); }, 0.5f, 1.5f);
  // softmax rows can have near-zero gradient entries; allow float32 noise
  check_unary("softmax", [](const Tensor& t) { return softmax(t); }, -2.0f, 2.0f, 1e-4f);
  check_unary("transpose", [](const Tensor& t) { return transpose(t); }, -1.0f, 1.0f);
  check_unary("scale", [](const Tensor& t) { return scale(t, -1.7f); }, -1.0f, 1.0f);
  check_unary("add_scalar", [](const Tensor& t) { return add_scalar(t, 0.3f); }, -1.0f, 1.0f);
  check_unary("sum_axis0", [](const Tensor& t) { return sum_axis(t, 0); }, -1.0f, 1.0f);
  check_unary("sum_axis1", [](const Tensor& t) { return sum_axis(t, 1); }, -1.0f, 1.0f);
  check_unary("mean_axis", [](const Tensor& t) { return mean_axis(t, 0); }, -1.0f, 1.0f);
  check_unary("reshape", [](const Tensor& t) { return reshape(t, {5, 3}); }, -1.0f, 1.0f);
  check_unary("slice", [](const Tensor& t) { return slice_cols(t, 1, 4); }, -1.0f, 1.0f);
  check_unary("gather", [](const Tensor& t) { return gather_rows(t, {2, 0, 0}); }, -1.0f, 1.0f);
  check_unary("scatter", [](const Tensor& t) { return scatter_rows(t, {4, 1, 1}, 6); }, -1.0f, 1.0f);

  auto check_binary = [&](const char* name, auto op, float lo, float hi) {
    INFO(std::string(name));
    Tensor a = rand_t({3, 4}, rng, lo, hi);
    Tensor b = rand_t({3, 4}, rng, lo, hi);
    auto forward = [&]() { return weighted(op(a, b)); };
    for (Tensor p : {a, b}) {
      Tensor loss = forward();
      auto ad = ad_grad(loss, p);
      auto fd = fd_gradient([&]() { return forward().item(); }, p, h);
      CHECK(grads_close(ad, fd));
    }
  };
  check_binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, -1, 1);
  check_binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, -1, 1);
  check_binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, 0.5f, 1.5f);
  check_binary("divide", [](const Tensor& a, const Tensor& b) { return divide(a, b); }, 0.5f, 2.0f);

  SUBCASE("matmul") {
    Tensor a = rand_t({4, 3}, rng);
    Tensor b = rand_t({3, 5}, rng);
    auto forward = [&]() { return weighted(matmul(a, b)); };
    for (Tensor p : {a, b}) {
      auto ad = ad_grad(forward(), p);
      auto fd = fd_gradient([&]() { return forward().item(); }, p, h);
      CHECK(grads_close(ad, fd));
    }
  }
  SUBCASE("bmm") {
    Tensor a = rand_t({2, 3, 4}, rng);
    Tensor b = rand_t({2, 4, 2}, rng);
    auto forward = [&]() { return weighted(bmm(a, b)); };
    for (Tensor p : {a, b}) {
      auto ad = ad_grad(forward(), p);
      auto fd = fd_gradient([&]() { return forward().item(); }, p, h);
      CHECK(grads_close(ad, fd));
    }
  }
  SUBCASE("rowvec ops") {
    Tensor a = rand_t({4, 3}, rng);
    Tensor b = rand_t({1, 3}, rng, 0.5f, 1.5f);
    auto fwd1 = [&]() { return weighted(add_rowvec(a, b)); };
    auto fwd2 = [&]() { return weighted(mul_rowvec(a, b)); };
    for (Tensor p : {a, b}) {
      CHECK(grads_close(ad_grad(fwd1(), p),
                        fd_gradient([&]() { return fwd1().item(); }, p, h)));
      CHECK(grads_close(ad_grad(fwd2(), p),
                        fd_gradient([&]() { return fwd2().item(); }, p, h)));
    }
  }
  SUBCASE("repeat and concats") {
    Tensor a = rand_t({1, 4}, rng);
    auto fwd = [&]() { return weighted(repeat_rows(a, 5)); };
    CHECK(grads_close(ad_grad(fwd(), a),
                      fd_gradient([&]() { return fwd().item(); }, a, h)));

    Tensor l = rand_t({3, 2}, rng);
    Tensor r = rand_t({3, 3}, rng);
    auto fwd2 = [&]() { return weighted(concat_cols(l, r)); };
    for (Tensor p : {l, r}) {
      CHECK(grads_close(ad_grad(fwd2(), p),
                        fd_gradient([&]() { return fwd2().item(); }, p, h)));
    }
    Tensor u = rand_t({2, 3}, rng);
    Tensor v = rand_t({4, 3}, rng);
    auto fwd3 = [&]() { return weighted(concat_rows(u, v)); };
    for (Tensor p : {u, v}) {
      CHECK(grads_close(ad_grad(fwd3(), p),
                        fd_gradient([&]() { return fwd3().item(); }, p, h)));
    }
  }
  SUBCASE("conv2d zero and periodic padding") {
    // conv is linear in every scalar, so a wide step is exact and keeps the
    // float32 evaluation noise far below tolerance.
    for (Padding pad : {Padding::zero, Padding::periodic}) {
      Tensor x = rand_t({2, 5, 6}, rng);
      Tensor w = rand_t({3, 2, 3, 3}, rng);
      Tensor b = rand_t({3}, rng);
      auto fwd = [&]() { return weighted(conv2d(x, w, b, pad)); };
      for (Tensor p : {x, w, b}) {
        CHECK(grads_close(ad_grad(fwd(), p),
                          fd_gradient([&]() { return fwd().item(); }, p, 0.5f)));
      }
    }
  }
}

TEST_CASE("errors: non-scalar loss, NaN naming, shape mismatch") {
  Rng rng(3);
  Tensor a = rand_t({2, 2}, rng);
  CHECK_THROWS_AS(backward(a), ShapeError);

  Tensor neg_in = Tensor::from_data({2}, {-1.0f, 2.0f}, true);
  CHECK_THROWS_WITH_AS(log(neg_in), doctest::Contains("log"), NumericError);

  Tensor b = rand_t({3, 2}, rng);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("repeated backward on identical graphs is deterministic") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor a = rand_t({6, 6}, rng);
    Tensor b = rand_t({6, 6}, rng);
    Tensor loss = mean_all(square(matmul(sin(a), tanh(b))));
    backward(loss);
    std::vector<float> g(a.grad().begin(), a.grad().end());
    return g;
  };
  auto g1 = run(42), g2 = run(42);
  CHECK(g1 == g2);  // bitwise
}

TEST_CASE("linearity of backward") {
  Rng rng(5);
  Tensor p = rand_t({4, 4}, rng);
  Tensor x = rand_t({4, 4}, rng, -1, 1, false);
  auto f = [&]() { return mean_all(square(matmul(x, p))); };
  auto g = [&]() { return mean_all(mul(x, p)); };
  const float ca = 0.7f, cb = -1.3f;

  auto gf = ad_grad(f(), p);
  auto gg = ad_grad(g(), p);
  auto gc = ad_grad(add(scale(f(), ca), scale(g(), cb)), p);
  for (size_t i = 0; i < gf.size(); ++i) {
    CHECK(gc[i] == doctest::Approx(ca * gf[i] + cb * gg[i]).epsilon(1e-4));
  }
}

TEST_CASE("second-order gradients through grad_graph") {
  SUBCASE("cubic: d2(x^3)/dx2 = 6x") {
    Tensor x = Tensor::scalar(1.7f, true);
    Tensor y = mul(mul(x, x), x);
    std::vector<Tensor> g = grad_graph(y, {x});
    CHECK(g[0].item() == doctest::Approx(3 * 1.7f * 1.7f));
    backward(g[0]);
    CHECK(x.grad()[0] == doctest::Approx(6 * 1.7f).epsilon(1e-4));
  }
  SUBCASE("grad-of-grad matches finite differences of the gradient") {
    Rng rng(9);
    Tensor w = rand_t({3, 3}, rng);
    Tensor x = rand_t({2, 3}, rng, -1, 1, false);
    auto grad_norm = [&]() {
      Tensor loss = mean_all(square(sin(matmul(x, w))));
      std::vector<Tensor> g = grad_graph(loss, {w});
      return mean_all(square(g[0]));
    };
    Tensor outer = grad_norm();
    backward(outer);
    auto ad = std::vector<float>(w.grad().begin(), w.grad().end());
    auto fd = fd_gradient([&]() { return grad_norm().item(); }, w);
    CHECK(grads_close(ad, fd, 2e-3f, 1e-5f));
  }
  SUBCASE("first-order-only ops refuse graph gradients") {
    Rng rng(13);
    Tensor a = rand_t({2, 3}, rng);
    Tensor loss = mean_all(softmax(a));
    CHECK_THROWS_AS(grad_graph(loss, {a}), NumericError);
  }
}
