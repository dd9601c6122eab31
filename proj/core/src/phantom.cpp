#include <algorithm>
#include <cmath>

#include "ponp/tasks.hpp"

namespace ponp {

Phantom canonical_shepp_logan() {
  // Contrast-enhanced parameter table; (cx, cy, a, b, psi_deg, rho).
  constexpr float deg = 3.14159265358979323846f / 180.0f;
  Phantom p;
  p.ellipses = {
      {0.0f, 0.0f, 0.69f, 0.92f, 0.0f, 1.0f},
      {0.0f, -0.0184f, 0.6624f, 0.874f, 0.0f, -0.8f},
      {0.22f, 0.0f, 0.11f, 0.31f, -18.0f * deg, -0.2f},
      {-0.22f, 0.0f, 0.16f, 0.41f, 18.0f * deg, -0.2f},
      {0.0f, 0.35f, 0.21f, 0.25f, 0.0f, 0.1f},
      {0.0f, 0.1f, 0.046f, 0.046f, 0.0f, 0.1f},
      {0.0f, -0.1f, 0.046f, 0.046f, 0.0f, 0.1f},
      {-0.08f, -0.605f, 0.046f, 0.023f, 0.0f, 0.1f},
      {0.0f, -0.606f, 0.023f, 0.023f, 0.0f, 0.1f},
      {0.06f, -0.605f, 0.023f, 0.046f, 0.0f, 0.1f},
  };
  return p;
}

Phantom gen_phantom(std::uint64_t seed, float jitter) {
  Phantom p = canonical_shepp_logan();
  Rng rng(seed);
  for (Ellipse& e : p.ellipses) {
    auto perturb = [&](float v) { return v * (1.0f + rng.uniform(-jitter, jitter)); };
    e.cx = perturb(e.cx);
    e.cy = perturb(e.cy);
    e.a = perturb(e.a);
    e.b = perturb(e.b);
    e.psi = perturb(e.psi);
    e.rho = perturb(e.rho);
    // Keep the ellipse inside the unit disk.
    const float reach = std::sqrt(e.cx * e.cx + e.cy * e.cy) + std::max(e.a, e.b);
    if (reach > 1.0f) {
      const float room = 1.0f - std::sqrt(e.cx * e.cx + e.cy * e.cy);
      const float s = 0.999f * room / std::max(e.a, e.b);
      e.a *= s;
      e.b *= s;
    }
  }
  return p;
}

float phantom_density_at(const Phantom& phantom, float x, float y) {
  float d = 0.0f;
  for (const Ellipse& e : phantom.ellipses) {
    const float dx = x - e.cx, dy = y - e.cy;
    const float c = std::cos(e.psi), s = std::sin(e.psi);
    const float u = (c * dx + s * dy) / e.a;
    const float v = (-s * dx + c * dy) / e.b;
    if (u * u + v * v <= 1.0f) d += e.rho;
  }
  return std::clamp(d, 0.0f, 1.0f);
}

Tensor phantom_density(const Phantom& phantom, const Tensor& points) {
  if (points.ndim() != 2 || points.dim(1) != 2) {
    throw ShapeError("phantom_density: expected [n,2] points");
  }
  const int n = points.dim(0);
  std::vector<float> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    out[static_cast<size_t>(i)] =
        phantom_density_at(phantom, points.at(i, 0), points.at(i, 1));
  }
  return Tensor::from_data({n, 1}, std::move(out));
}

Tensor grid_coords(int h, int w) {
  std::vector<float> pts(static_cast<size_t>(h) * w * 2);
  size_t o = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      pts[o++] = -1.0f + (c + 0.5f) * 2.0f / w;
      pts[o++] = -1.0f + (r + 0.5f) * 2.0f / h;
    }
  }
  return Tensor::from_data({h * w, 2}, std::move(pts));
}

Tensor rasterize_phantom(const Phantom& phantom, int resolution) {
  return phantom_density(phantom, grid_coords(resolution, resolution));
}

}  // namespace ponp
