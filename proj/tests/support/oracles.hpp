#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ponp/tensor.hpp"

namespace ponp::testing {

/// Central finite differences of a scalar functional w.r.t. one parameter
/// tensor. The functional must re-evaluate the full graph on each call.
inline std::vector<float> fd_gradient(const std::function<float()>& eval,
                                      Tensor param, float h = 1e-3f) {
  std::vector<float> g(static_cast<size_t>(param.size()));
  auto vals = param.values_mut();
  for (size_t i = 0; i < g.size(); ++i) {
    const float orig = vals[i];
    vals[i] = orig + h;
    const double fp = eval();
    vals[i] = orig - h;
    const double fm = eval();
    vals[i] = orig;
    g[i] = static_cast<float>((fp - fm) / (2.0 * h));
  }
  return g;
}

/// |ad - fd| <= abs_floor + rel_tol * max(|ad|, |fd|), elementwise.
inline bool grads_close(std::span<const float> ad, std::span<const float> fd,
                        float rel_tol = 1e-3f, float abs_floor = 1e-5f,
                        float* worst = nullptr) {
  if (ad.size() != fd.size()) return false;
  bool ok = true;
  float w = 0.0f;
  for (size_t i = 0; i < ad.size(); ++i) {
    const float scale = std::max(std::abs(ad[i]), std::abs(fd[i]));
    const float err = std::abs(ad[i] - fd[i]);
    const float rel = err / std::max(scale, 1e-12f);
    if (err > abs_floor + rel_tol * scale) ok = false;
    w = std::max(w, std::min(rel, err));
  }
  if (worst) *worst = w;
  return ok;
}

/// Analytic parallel-beam projection of a rotated, translated ellipse.
/// Offsets run along (cos(angle), sin(angle)); rays travel perpendicular.
inline double ellipse_projection(double a, double b, double cx, double cy,
                                 double psi, double rho, double angle,
                                 double offset) {
  const double shift = cx * std::cos(angle) + cy * std::sin(angle);
  const double t = offset - shift;
  const double c = std::cos(angle - psi), s = std::sin(angle - psi);
  const double alpha2 = a * a * c * c + b * b * s * s;
  if (t * t >= alpha2) return 0.0;
  return 2.0 * rho * a * b / alpha2 * std::sqrt(alpha2 - t * t);
}

}  // namespace ponp::testing
