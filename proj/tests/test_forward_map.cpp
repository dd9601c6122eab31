#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "ponp/field.hpp"
#include "ponp/forward_map.hpp"

using namespace ponp;
using ponp::testing::ellipse_projection;
using ponp::testing::fd_gradient;
using ponp::testing::grads_close;

TEST_CASE("masking basics") {
  Tensor v = Tensor::from_data({3, 1}, {1, 2, 3});
  SUBCASE("all indices is the identity") {
    Tensor out = apply_masking(v, {0, 1, 2});
    CHECK(out.values()[0] == 1);
    CHECK(out.values()[1] == 2);
    CHECK(out.values()[2] == 3);
  }
  SUBCASE("definition: rows picked in order") {
    Tensor out = apply_masking(v, {2, 0});
    CHECK(out.at(0, 0) == 3);
    CHECK(out.at(1, 0) == 1);
  }
  SUBCASE("empty selection is a legal empty sensor batch") {
    Tensor out = apply_masking(v, {});
    CHECK(out.dim(0) == 0);
  }
  SUBCASE("out-of-range index errors") {
    CHECK_THROWS_AS(apply_masking(v, {3}), ShapeError);
  }
  SUBCASE("masking composition equals composed subset") {
    Tensor a = apply_masking(apply_masking(v, {2, 0, 1}), {1, 2});
    Tensor b = apply_masking(v, {0, 1});
    CHECK(a.values()[0] == b.values()[0]);
    CHECK(a.values()[1] == b.values()[1]);
  }
}

TEST_CASE("integral projection oracles") {
  SUBCASE("zero field projects to a zero row") {
    Tensor row = apply_integral_projection(
        [](const Tensor& pts) { return Tensor::zeros({pts.dim(0), 1}); }, 0.7f,
        64, 32);
    for (float v : row.values()) CHECK(v == 0.0f);
  }
  SUBCASE("uniform unit disk: chord length 2*sqrt(1-s^2) at 512 samples") {
    const int rays = 128;
    Tensor row = apply_integral_projection(
        [](const Tensor& pts) {
          std::vector<float> d(static_cast<size_t>(pts.dim(0)), 1.0f);
          return Tensor::from_data({pts.dim(0), 1}, std::move(d));
        },
        0.3f, rays, 512);
    double worst = 0.0;
    for (int r = 0; r < rays; ++r) {
      const double s = -1.0 + (r + 0.5) * 2.0 / rays;
      const double expect = 2.0 * std::sqrt(std::max(0.0, 1.0 - s * s));
      worst = std::max(worst, std::abs(row.values()[static_cast<size_t>(r)] - expect));
    }
    CHECK(worst < 2e-3);
  }
  SUBCASE("rotated, translated ellipse matches the analytic formula") {
    const double a = 0.45, b = 0.2, cx = 0.15, cy = -0.1, psi = 0.5, rho = 0.4;
    auto density = [&](const Tensor& pts) {
      std::vector<float> d(static_cast<size_t>(pts.dim(0)));
      for (int i = 0; i < pts.dim(0); ++i) {
        const double dx = pts.at(i, 0) - cx, dy = pts.at(i, 1) - cy;
        const double c = std::cos(psi), s = std::sin(psi);
        const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
        d[static_cast<size_t>(i)] = (u * u + v * v <= 1.0) ? static_cast<float>(rho) : 0.0f;
      }
      return Tensor::from_data({pts.dim(0), 1}, std::move(d));
    };
    const int rays = 128;
    for (double angle : {0.0, 0.9, 2.2}) {
      Tensor row = apply_integral_projection(density, static_cast<float>(angle),
                                             rays, 512);
      double worst = 0.0;
      for (int r = 0; r < rays; ++r) {
        const double s = -1.0 + (r + 0.5) * 2.0 / rays;
        const double expect = ellipse_projection(a, b, cx, cy, psi, rho, angle, s);
        worst = std::max(worst,
                         std::abs(row.values()[static_cast<size_t>(r)] - expect));
      }
      CHECK_MESSAGE(worst < 2e-3, "angle " << angle << " err " << worst);
    }
  }
  SUBCASE("projection is linear in the field") {
    Rng rng(3);
    ProjectionSpec spec;
    spec.angles = {0.4f, 1.9f};
    spec.n_rays = 24;
    spec.n_samples = 24;
    Tensor pts = projection_points(spec);
    Tensor f1 = Tensor::uniform({pts.dim(0), 1}, -1, 1, rng);
    Tensor f2 = Tensor::uniform({pts.dim(0), 1}, -1, 1, rng);
    const float ca = 0.7f, cb = -1.2f;
    Tensor lhs = project_field_values(add(scale(f1, ca), scale(f2, cb)), spec);
    Tensor rhs = add(scale(project_field_values(f1, spec), ca),
                     scale(project_field_values(f2, spec), cb));
    for (int i = 0; i < lhs.size(); ++i) {
      CHECK(std::abs(lhs.values()[i] - rhs.values()[i]) < 1e-5f);
    }
  }
  SUBCASE("radially symmetric field projects angle-independently") {
    auto radial = [](const Tensor& pts) {
      std::vector<float> d(static_cast<size_t>(pts.dim(0)));
      for (int i = 0; i < pts.dim(0); ++i) {
        const float r2 = pts.at(i, 0) * pts.at(i, 0) + pts.at(i, 1) * pts.at(i, 1);
        d[static_cast<size_t>(i)] = std::exp(-3.0f * r2);
      }
      return Tensor::from_data({pts.dim(0), 1}, std::move(d));
    };
    Tensor r0 = apply_integral_projection(radial, 0.0f, 64, 256);
    for (float angle : {0.7f, 1.3f, 2.9f}) {
      Tensor r1 = apply_integral_projection(radial, angle, 64, 256);
      float worst = 0.0f;
      for (int i = 0; i < r0.size(); ++i) {
        worst = std::max(worst, std::abs(r0.values()[i] - r1.values()[i]));
      }
      CHECK(worst < 1e-4f);
    }
  }
}

TEST_CASE("volume rendering oracles") {
  CameraSpec cam;
  cam.height = cam.width = 4;
  cam.focal = 4.0f;
  cam.position = {0, 0, 2.5f};
  cam.near = 1.0f;
  cam.far = 4.0f;
  cam.n_samples = 256;
  cam.background = {1.0f, 0.5f, 0.25f};

  SUBCASE("zero density renders the background exactly") {
    Tensor img = apply_volume_render(
        [](const Tensor& pts) {
          return Tensor::zeros({pts.dim(0), 4});
        },
        cam);
    for (int i = 0; i < img.dim(0); ++i) {
      CHECK(img.at(i, 0) == 1.0f);
      CHECK(img.at(i, 1) == 0.5f);
      CHECK(img.at(i, 2) == 0.25f);
    }
  }
  SUBCASE("homogeneous medium matches closed-form transmittance") {
    const float sigma0 = 0.8f;
    const float c0[3] = {0.2f, 0.6f, 0.9f};
    Tensor img = apply_volume_render(
        [&](const Tensor& pts) {
          std::vector<float> v(static_cast<size_t>(pts.dim(0)) * 4);
          for (int i = 0; i < pts.dim(0); ++i) {
            v[static_cast<size_t>(i) * 4] = sigma0;
            for (int c = 0; c < 3; ++c) v[static_cast<size_t>(i) * 4 + 1 + c] = c0[c];
          }
          return Tensor::from_data({pts.dim(0), 4}, std::move(v));
        },
        cam);
    const double trans = std::exp(-sigma0 * (cam.far - cam.near));
    for (int i = 0; i < img.dim(0); ++i) {
      for (int c = 0; c < 3; ++c) {
        const double expect = (1.0 - trans) * c0[c] + trans * cam.background[static_cast<size_t>(c)];
        CHECK(std::abs(img.at(i, c) - expect) < 1e-3);
      }
    }
  }
  SUBCASE("opaque first sample shows that sample's color") {
    Tensor img = apply_volume_render(
        [&](const Tensor& pts) {
          std::vector<float> v(static_cast<size_t>(pts.dim(0)) * 4, 0.0f);
          // the first sample of each ray carries enormous density
          for (int i = 0; i < pts.dim(0); i += cam.n_samples) {
            v[static_cast<size_t>(i) * 4] = 1e8f;
            v[static_cast<size_t>(i) * 4 + 1] = 0.123f;
            v[static_cast<size_t>(i) * 4 + 2] = 0.456f;
            v[static_cast<size_t>(i) * 4 + 3] = 0.789f;
          }
          return Tensor::from_data({pts.dim(0), 4}, std::move(v));
        },
        cam);
    for (int i = 0; i < img.dim(0); ++i) {
      CHECK(img.at(i, 0) == doctest::Approx(0.123f));
      CHECK(img.at(i, 1) == doctest::Approx(0.456f));
      CHECK(img.at(i, 2) == doctest::Approx(0.789f));
    }
  }
  SUBCASE("degenerate camera is rejected") {
    CameraSpec bad = cam;
    bad.focal = 0.0f;
    CHECK_THROWS_AS(apply_volume_render(
                        [](const Tensor& pts) {
                          return Tensor::zeros({pts.dim(0), 4});
                        },
                        bad),
                    ConfigError);
  }
}

TEST_CASE("forward maps are differentiable end to end") {
  // Smooth activations keep wide-step finite differences clean.
  FieldConfig fc;
  fc.arch = FieldArch::siren;
  fc.omega0 = 3.0f;
  fc.width = 8;
  fc.depth = 2;
  fc.in_dim = 2;
  fc.out_dim = 1;
  ConditionedField field = init_field(fc, 23);

  SUBCASE("loss through the projection reaches field params correctly") {
    ProjectionSpec spec;
    spec.angles = {0.5f};
    spec.n_rays = 4;
    spec.n_samples = 8;
    Tensor target = Tensor::full({4, 1}, 0.3f);
    auto forward = [&]() {
      Tensor pts = projection_points(spec);
      FieldOutput out = field(pts, std::nullopt);
      return mse(project_field_values(out.mean, spec), target);
    };
    Tensor loss = forward();
    field.params.zero_grad();
    backward(loss);
    for (const char* name : {"layer0.W", "layer1.W", "head_m.b"}) {
      auto fd = fd_gradient([&]() { return forward().item(); },
                            field.params.at(name), 1e-2f);
      CHECK(grads_close(field.params.at(name).grad(), fd, 2e-3f, 2e-5f));
    }
  }
  SUBCASE("loss through the renderer reaches field params correctly") {
    FieldConfig rc = fc;
    rc.in_dim = 3;
    rc.out_dim = 4;
    ConditionedField rfield = init_field(rc, 29);
    CameraSpec cam;
    cam.height = cam.width = 2;
    cam.focal = 2.0f;
    cam.position = {0, 0, 2.0f};
    cam.near = 1.0f;
    cam.far = 3.0f;
    cam.n_samples = 6;
    Tensor target = Tensor::full({4, 3}, 0.4f);
    auto forward = [&]() {
      Tensor pts = camera_ray_points(cam);
      FieldOutput out = rfield(pts, std::nullopt);
      return mse(composite_ray_values(out.mean, cam), target);
    };
    Tensor loss = forward();
    rfield.params.zero_grad();
    backward(loss);
    for (const char* name : {"layer0.W", "head_m.W"}) {
      auto fd = fd_gradient([&]() { return forward().item(); },
                            rfield.params.at(name), 1e-2f);
      CHECK(grads_close(rfield.params.at(name).grad(), fd, 2e-3f, 2e-5f));
    }
  }
  SUBCASE("loss through masking scatters gradients") {
    Rng mrng(1);
    Tensor values = Tensor::uniform({6, 1}, -1, 1, mrng, true);
    Tensor target = Tensor::full({2, 1}, 0.0f);
    auto forward = [&]() { return mse(apply_masking(values, {4, 1}), target); };
    Tensor loss = forward();
    values.zero_grad();
    backward(loss);
    auto fd = fd_gradient([&]() { return forward().item(); }, values);
    CHECK(grads_close(values.grad(), fd));
    // untouched rows get exactly zero gradient
    CHECK(values.grad()[0] == 0.0f);
    CHECK(values.grad()[2] == 0.0f);
  }
}

TEST_CASE("sinogram file round trip") {
  Rng rng(9);
  Tensor sino = Tensor::uniform({3, 16}, 0, 2, rng);
  std::vector<float> angles{0.1f, 1.2f, 2.3f};
  const std::string base = "/tmp/ponp_test_sinogram";
  save_sinogram(base, sino, angles);
  std::vector<float> angles_in;
  Tensor loaded = load_sinogram(base, &angles_in);
  CHECK(angles_in == angles);
  REQUIRE(loaded.shape() == sino.shape());
  for (int i = 0; i < sino.size(); ++i) {
    CHECK(loaded.values()[i] == sino.values()[i]);
  }
}
