#include "ponp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ponp/parallel.hpp"

namespace ponp {

using detail::Node;

namespace {

using FastFn = std::function<void(Node&)>;
using GraphFn = std::function<std::vector<Tensor>(const Tensor&)>;

Tensor make_op(const char* op, Shape shape, std::vector<float> value,
               std::initializer_list<Tensor> parents, FastFn fast,
               GraphFn graph = nullptr) {
  detail::check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs_grad = false;
  for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  if (needs_grad) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(fast);
    node->backward_graph_fn = std::move(graph);
  }
  return Tensor::wrap(std::move(node));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_2d(const char* op, const Tensor& a) {
  if (a.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected 2D tensor, got " +
                     shape_str(a.shape()));
  }
}

// Accumulate into a parent's grad buffer if it participates in the graph.
void axpy_into(Node& parent, std::span<const float> g, float alpha = 1.0f) {
  if (!parent.requires_grad) return;
  float* dst = parent.grad.data();
  for (size_t i = 0; i < g.size(); ++i) dst[i] += alpha * g[i];
}

// ---------------------------------------------------------------------------
// gemm kernels (row-major, accumulate into c)
// ---------------------------------------------------------------------------

void gemm_nn_rows(int row_begin, int row_end, int k, int n, const float* a,
                  const float* b, float* c) {
  // 4-row blocks reuse each B row four times from L1.
  int i = row_begin;
  for (; i + 4 <= row_end; i += 4) {
    const float* a0 = a + static_cast<size_t>(i) * k;
    const float* a1 = a0 + k;
    const float* a2 = a1 + k;
    const float* a3 = a2 + k;
    float* c0 = c + static_cast<size_t>(i) * n;
    float* c1 = c0 + n;
    float* c2 = c1 + n;
    float* c3 = c2 + n;
    for (int p = 0; p < k; ++p) {
      const float v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      const float* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) {
        const float bj = bp[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < row_end; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    float* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = ai[p];
      const float* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] += a[m,k] * b[k,n]. Large products split by output rows across the
// worker pool; each row keeps a fixed accumulation order, so results are
// bitwise identical to the single-thread path.
void gemm_nn(int m, int k, int n, const float* a, const float* b, float* c) {
  const std::int64_t flops = 2ll * m * k * n;
  const int workers = worker_count();
  if (workers > 1 && flops > (1 << 22) && m >= 2 * workers &&
      !in_parallel_region()) {
    const int chunk = (m + workers - 1) / workers;
    parallel_for(workers, [&](int w) {
      const int lo = w * chunk;
      const int hi = std::min(m, lo + chunk);
      if (lo < hi) gemm_nn_rows(lo, hi, k, n, a, b, c);
    });
    return;
  }
  gemm_nn_rows(0, m, k, n, a, b, c);
}

void gemm_tn_cols(int p_begin, int p_end, int m, int k, int n, const float* a,
                  const float* b, float* c) {
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    const float* bi = b + static_cast<size_t>(i) * n;
    for (int p = p_begin; p < p_end; ++p) {
      const float av = ai[p];
      float* cp = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n], split by output rows p like gemm_nn.
void gemm_tn(int m, int k, int n, const float* a, const float* b, float* c) {
  const std::int64_t flops = 2ll * m * k * n;
  const int workers = worker_count();
  if (workers > 1 && flops > (1 << 22) && k >= 2 * workers &&
      !in_parallel_region()) {
    const int chunk = (k + workers - 1) / workers;
    parallel_for(workers, [&](int w) {
      const int lo = w * chunk;
      const int hi = std::min(k, lo + chunk);
      if (lo < hi) gemm_tn_cols(lo, hi, m, k, n, a, b, c);
    });
    return;
  }
  gemm_tn_cols(0, k, m, k, n, a, b, c);
}

std::vector<float> transpose_raw(int rows, int cols, const float* a) {
  std::vector<float> t(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      t[static_cast<size_t>(j) * rows + i] = a[static_cast<size_t>(i) * cols + j];
    }
  }
  return t;
}

// c[m,n] += a[m,k] * b[n,k]^T, implemented via an explicit transpose so the
// inner loop stays vectorizable without reassociating float sums.
void gemm_nt(int m, int k, int n, const float* a, const float* b, float* c) {
  std::vector<float> bt = transpose_raw(n, k, b);
  gemm_nn(m, k, n, a, bt.data(), c);
}

Tensor elementwise(const char* op, const Tensor& a,
                   const std::function<float(float)>& f, FastFn fast,
                   GraphFn graph) {
  std::vector<float> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = f(v);
  return make_op(op, a.shape(), std::move(out), {a}, std::move(fast),
                 std::move(graph));
}

}  // namespace

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<float> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op(
      "add", a.shape(), std::move(out), {a, b},
      [](Node& n) {
        axpy_into(*n.parents[0], n.grad);
        axpy_into(*n.parents[1], n.grad);
      },
      [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<float> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(
      "sub", a.shape(), std::move(out), {a, b},
      [](Node& n) {
        axpy_into(*n.parents[0], n.grad);
        axpy_into(*n.parents[1], n.grad, -1.0f);
      },
      [](const Tensor& g) { return std::vector<Tensor>{g, neg(g)}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<float> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op(
      "mul", a.shape(), std::move(out), {a, b},
      [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
          for (size_t i = 0; i < n.grad.size(); ++i)
            pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
          for (size_t i = 0; i < n.grad.size(); ++i)
            pb.grad[i] += n.grad[i] * pa.value[i];
        }
      },
      [a, b](const Tensor& g) {
        return std::vector<Tensor>{mul(g, b), mul(g, a)};
      });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  require_same_shape("divide", a, b);
  std::vector<float> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return make_op(
      "divide", a.shape(), std::move(out), {a, b},
      [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
          for (size_t i = 0; i < n.grad.size(); ++i)
            pa.grad[i] += n.grad[i] / pb.value[i];
        }
        if (pb.requires_grad) {
          for (size_t i = 0; i < n.grad.size(); ++i)
            pb.grad[i] -= n.grad[i] * n.value[i] / pb.value[i];
        }
      },
      [a, b](const Tensor& g) {
        return std::vector<Tensor>{divide(g, b),
                                   neg(divide(mul(g, a), mul(b, b)))};
      });
}

Tensor scale(const Tensor& a, float c) {
  std::vector<float> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= c;
  return make_op(
      "scale", a.shape(), std::move(out), {a},
      [c](Node& n) { axpy_into(*n.parents[0], n.grad, c); },
      [c](const Tensor& g) { return std::vector<Tensor>{scale(g, c)}; });
}

Tensor add_scalar(const Tensor& a, float c) {
  std::vector<float> out(a.values().begin(), a.values().end());
  for (auto& v : out) v += c;
  return make_op(
      "add_scalar", a.shape(), std::move(out), {a},
      [](Node& n) { axpy_into(*n.parents[0], n.grad); },
      [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

// ---------------------------------------------------------------------------
// pointwise nonlinearities
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& a) {
  return elementwise(
      "relu", a, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](Node& n) {
        Node& p = *n.parents[0];
        for (size_t i = 0; i < n.grad.size(); ++i)
          if (p.value[i] > 0.0f) p.grad[i] += n.grad[i];
      },
      [a](const Tensor& g) {
        // 0/1 mask is constant; relu is linear a.e. so this is exact.
        std::vector<float> mask(a.values().begin(), a.values().end());
        for (auto& v : mask) v = v > 0.0f ? 1.0f : 0.0f;
        return std::vector<Tensor>{
            mul(g, Tensor::from_data(a.shape(), std::move(mask)))};
      });
}

Tensor sin(const Tensor& a) {
  return elementwise(
      "sin", a, [](float v) { return std::sin(v); },
      [](Node& n) {
        Node& p = *n.parents[0];
        for (size_t i = 0; i < n.grad.size(); ++i)
          p.grad[i] += n.grad[i] * std::cos(p.value[i]);
      },
      [a](const Tensor& g) { return std::vector<Tensor>{mul(g, cos(a))}; });
}

Tensor cos(const Tensor& a) {
  return elementwise(
      "cos", a, [](float v) { return std::cos(v); },
      [](Node& n) {
        Node& p = *n.parents[0];
        for (size_t i = 0; i < n.grad.size(); ++i)
          p.grad[i] -= n.grad[i] * std::sin(p.value[i]);
      },
      [a](const Tensor& g) {
        return std::vector<Tensor>{neg(mul(g, sin(a)))};
      });
}

Tensor exp(const Tensor& a) {
  return elementwise(
      "exp", a, [](float v) { return std::exp(v); },
      [](Node& n) {
        Node& p = *n.parents[0];
        for (size_t i = 0; i < n.grad.size(); ++i)
          p.grad[i] += n.grad[i] * n.value[i];
      },
      [a](const Tensor& g) { return std::vector<Tensor>{mul(g, exp(a))}; });
}

Tensor log(const Tensor& a) {
  return elementwise(
      "log", a, [](float v) { return std::log(v); },
      [](Node& n) {
        Node& p = *n.parents[0];
        for (size_t i = 0; i < n.grad.size(); ++i)
          p.grad[i] += n.grad[i] / p.value[i];
      },
      [a](const Tensor& g) { return std::vector<Tensor>{divide(g, a)}; });
}

Tensor tanh(const Tensor& a) {
  return elementwise(
      "tanh", a, [](float v) { return std::tanh(v); },
      [](Node& n) {
        Node& p = *n.parents[0];
        for (size_t i = 0; i < n.grad.size(); ++i)
          p.grad[i] += n.grad[i] * (1.0f - n.value[i] * n.value[i]);
      },
      [a](const Tensor& g) {
        return std::vector<Tensor>{
            mul(g, add_scalar(neg(square(tanh(a))), 1.0f))};
      });
}

namespace {
float softplus_val(float v) {
  if (v > 20.0f) return v;
  if (v < -20.0f) return std::exp(v);
  return std::log1p(std::exp(v));
}
float sigmoid_val(float v) { return 1.0f / (1.0f + std::exp(-v)); }
}  // namespace

Tensor softplus(const Tensor& a) {
  return elementwise(
      "softplus", a, softplus_val,
      [](Node& n) {
        Node& p = *n.parents[0];
        for (size_t i = 0; i < n.grad.size(); ++i)
          p.grad[i] += n.grad[i] * sigmoid_val(p.value[i]);
      },
      [a](const Tensor& g) {
        // d softplus = sigmoid(a) = 1 / (1 + exp(-a))
        Tensor ones = Tensor::full(a.shape(), 1.0f);
        Tensor sig = divide(ones, add_scalar(exp(neg(a)), 1.0f));
        return std::vector<Tensor>{mul(g, sig)};
      });
}

Tensor square(const Tensor& a) {
  return elementwise(
      "square", a, [](float v) { return v * v; },
      [](Node& n) {
        Node& p = *n.parents[0];
        for (size_t i = 0; i < n.grad.size(); ++i)
          p.grad[i] += 2.0f * n.grad[i] * p.value[i];
      },
      [a](const Tensor& g) {
        return std::vector<Tensor>{scale(mul(g, a), 2.0f)};
      });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims disagree, " + shape_str(a.shape()) +
                     " @ " + shape_str(b.shape()));
  }
  std::vector<float> out(static_cast<size_t>(m) * n, 0.0f);
  gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
  return make_op(
      "matmul", {m, n}, std::move(out), {a, b},
      [m, k, n](Node& node) {
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        if (pa.requires_grad)
          gemm_nt(m, n, k, node.grad.data(), pb.value.data(), pa.grad.data());
        if (pb.requires_grad)
          gemm_tn(m, k, n, pa.value.data(), node.grad.data(), pb.grad.data());
      },
      [a, b](const Tensor& g) {
        return std::vector<Tensor>{matmul(g, transpose(b)),
                                   matmul(transpose(a), g)};
      });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) +
                     " @ " + shape_str(b.shape()));
  }
  const int bt = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<float> out(static_cast<size_t>(bt) * m * n, 0.0f);
  for (int i = 0; i < bt; ++i) {
    gemm_nn(m, k, n, a.values().data() + static_cast<size_t>(i) * m * k,
            b.values().data() + static_cast<size_t>(i) * k * n,
            out.data() + static_cast<size_t>(i) * m * n);
  }
  return make_op("bmm", {bt, m, n}, std::move(out), {a, b},
                 [bt, m, k, n](Node& node) {
                   Node& pa = *node.parents[0];
                   Node& pb = *node.parents[1];
                   for (int i = 0; i < bt; ++i) {
                     const float* g = node.grad.data() + static_cast<size_t>(i) * m * n;
                     if (pa.requires_grad) {
                       gemm_nt(m, n, k, g,
                               pb.value.data() + static_cast<size_t>(i) * k * n,
                               pa.grad.data() + static_cast<size_t>(i) * m * k);
                     }
                     if (pb.requires_grad) {
                       gemm_tn(m, k, n,
                               pa.value.data() + static_cast<size_t>(i) * m * k,
                               g, pb.grad.data() + static_cast<size_t>(i) * k * n);
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const int m = a.dim(0), n = a.dim(1);
  std::vector<float> out = transpose_raw(m, n, a.values().data());
  return make_op(
      "transpose", {n, m}, std::move(out), {a},
      [m, n](Node& node) {
        Node& p = *node.parents[0];
        const float* g = node.grad.data();
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < m; ++i)
            p.grad[static_cast<size_t>(i) * n + j] +=
                g[static_cast<size_t>(j) * m + i];
      },
      [](const Tensor& g) { return std::vector<Tensor>{transpose(g)}; });
}

Tensor softmax(const Tensor& a) {
  require_2d("softmax", a);
  const int m = a.dim(0), n = a.dim(1);
  std::vector<float> out(a.values().begin(), a.values().end());
  for (int i = 0; i < m; ++i) {
    float* row = out.data() + static_cast<size_t>(i) * n;
    float mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    float sum = 0.0f;
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < n; ++j) row[j] /= sum;
  }
  return make_op("softmax", a.shape(), std::move(out), {a},
                 [m, n](Node& node) {
                   Node& p = *node.parents[0];
                   for (int i = 0; i < m; ++i) {
                     const float* s = node.value.data() + static_cast<size_t>(i) * n;
                     const float* g = node.grad.data() + static_cast<size_t>(i) * n;
                     float dot = 0.0f;
                     for (int j = 0; j < n; ++j) dot += s[j] * g[j];
                     float* pg = p.grad.data() + static_cast<size_t>(i) * n;
                     for (int j = 0; j < n; ++j) pg[j] += s[j] * (g[j] - dot);
                   }
                 });
}

// ---------------------------------------------------------------------------
// reductions and broadcasts
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  float s = 0.0f;
  for (float v : a.values()) s += v;
  return make_op(
      "sum_all", {1}, {s}, {a},
      [](Node& n) {
        Node& p = *n.parents[0];
        const float g = n.grad[0];
        for (auto& gv : p.grad) gv += g;
      },
      [a](const Tensor& g) {
        return std::vector<Tensor>{broadcast_scalar(g, a.shape())};
      });
}

Tensor mean_all(const Tensor& a) {
  const float inv = 1.0f / static_cast<float>(a.size());
  float s = 0.0f;
  for (float v : a.values()) s += v;
  return make_op(
      "mean_all", {1}, {s * inv}, {a},
      [inv](Node& n) {
        Node& p = *n.parents[0];
        const float g = n.grad[0] * inv;
        for (auto& gv : p.grad) gv += g;
      },
      [a, inv](const Tensor& g) {
        return std::vector<Tensor>{scale(broadcast_scalar(g, a.shape()), inv)};
      });
}

Tensor sum_axis(const Tensor& a, int axis) {
  require_2d("sum_axis", a);
  const int m = a.dim(0), n = a.dim(1);
  if (axis == 0) {
    std::vector<float> out(static_cast<size_t>(n), 0.0f);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out[j] += a.at(i, j);
    return make_op(
        "sum_axis", {1, n}, std::move(out), {a},
        [m, n](Node& node) {
          Node& p = *node.parents[0];
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              p.grad[static_cast<size_t>(i) * n + j] += node.grad[j];
        },
        [m](const Tensor& g) {
          return std::vector<Tensor>{repeat_rows(g, m)};
        });
  }
  if (axis == 1) {
    std::vector<float> out(static_cast<size_t>(m), 0.0f);
    for (int i = 0; i < m; ++i) {
      float s = 0.0f;
      for (int j = 0; j < n; ++j) s += a.at(i, j);
      out[i] = s;
    }
    return make_op(
        "sum_axis", {m, 1}, std::move(out), {a},
        [m, n](Node& node) {
          Node& p = *node.parents[0];
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              p.grad[static_cast<size_t>(i) * n + j] += node.grad[i];
        },
        [n](const Tensor& g) {
          return std::vector<Tensor>{matmul(g, Tensor::full({1, n}, 1.0f))};
        });
  }
  throw ShapeError("sum_axis: axis must be 0 or 1");
}

Tensor mean_axis(const Tensor& a, int axis) {
  const float inv = 1.0f / static_cast<float>(axis == 0 ? a.dim(0) : a.dim(1));
  return scale(sum_axis(a, axis), inv);
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  require_2d("add_rowvec", a);
  const int m = a.dim(0), n = a.dim(1);
  if (b.size() != n) {
    throw ShapeError("add_rowvec: row vector size " + shape_str(b.shape()) +
                     " does not match " + shape_str(a.shape()));
  }
  std::vector<float> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] += bv[j];
  return make_op(
      "add_rowvec", a.shape(), std::move(out), {a, b},
      [m, n](Node& node) {
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        if (pa.requires_grad) axpy_into(pa, node.grad);
        if (pb.requires_grad) {
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              pb.grad[j] += node.grad[static_cast<size_t>(i) * n + j];
        }
      },
      [](const Tensor& g) {
        return std::vector<Tensor>{g, reshape(sum_axis(g, 0), {1, g.dim(1)})};
      });
}

Tensor mul_rowvec(const Tensor& a, const Tensor& b) {
  require_2d("mul_rowvec", a);
  const int m = a.dim(0), n = a.dim(1);
  if (b.size() != n) {
    throw ShapeError("mul_rowvec: row vector size " + shape_str(b.shape()) +
                     " does not match " + shape_str(a.shape()));
  }
  std::vector<float> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] *= bv[j];
  return make_op(
      "mul_rowvec", a.shape(), std::move(out), {a, b},
      [m, n](Node& node) {
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        if (pa.requires_grad) {
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              pa.grad[static_cast<size_t>(i) * n + j] +=
                  node.grad[static_cast<size_t>(i) * n + j] * pb.value[j];
        }
        if (pb.requires_grad) {
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              pb.grad[j] += node.grad[static_cast<size_t>(i) * n + j] *
                            pa.value[static_cast<size_t>(i) * n + j];
        }
      },
      [a, b](const Tensor& g) {
        return std::vector<Tensor>{
            mul_rowvec(g, b), reshape(sum_axis(mul(g, a), 0), {1, a.dim(1)})};
      });
}

Tensor repeat_rows(const Tensor& a, int m) {
  require_2d("repeat_rows", a);
  if (a.dim(0) != 1) throw ShapeError("repeat_rows: expected a [1,n] tensor");
  const int n = a.dim(1);
  std::vector<float> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    std::memcpy(out.data() + static_cast<size_t>(i) * n, a.values().data(),
                sizeof(float) * n);
  return make_op(
      "repeat_rows", {m, n}, std::move(out), {a},
      [m, n](Node& node) {
        Node& p = *node.parents[0];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            p.grad[j] += node.grad[static_cast<size_t>(i) * n + j];
      },
      [](const Tensor& g) {
        return std::vector<Tensor>{reshape(sum_axis(g, 0), {1, g.dim(1)})};
      });
}

Tensor broadcast_scalar(const Tensor& a, Shape shape) {
  if (a.size() != 1) throw ShapeError("broadcast_scalar: source must be scalar");
  std::vector<float> out(static_cast<size_t>(numel(shape)), a.item());
  return make_op(
      "broadcast_scalar", std::move(shape), std::move(out), {a},
      [](Node& node) {
        Node& p = *node.parents[0];
        float s = 0.0f;
        for (float g : node.grad) s += g;
        p.grad[0] += s;
      },
      [](const Tensor& g) { return std::vector<Tensor>{sum_all(g)}; });
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_2d("concat_cols", a);
  require_2d("concat_cols", b);
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols: row counts differ, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int m = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<float> out(static_cast<size_t>(m) * (p + q));
  for (int i = 0; i < m; ++i) {
    std::memcpy(out.data() + static_cast<size_t>(i) * (p + q),
                a.values().data() + static_cast<size_t>(i) * p,
                sizeof(float) * p);
    std::memcpy(out.data() + static_cast<size_t>(i) * (p + q) + p,
                b.values().data() + static_cast<size_t>(i) * q,
                sizeof(float) * q);
  }
  return make_op(
      "concat_cols", {m, p + q}, std::move(out), {a, b},
      [m, p, q](Node& node) {
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        for (int i = 0; i < m; ++i) {
          const float* g = node.grad.data() + static_cast<size_t>(i) * (p + q);
          if (pa.requires_grad)
            for (int j = 0; j < p; ++j)
              pa.grad[static_cast<size_t>(i) * p + j] += g[j];
          if (pb.requires_grad)
            for (int j = 0; j < q; ++j)
              pb.grad[static_cast<size_t>(i) * q + j] += g[p + j];
        }
      },
      [p, q](const Tensor& g) {
        return std::vector<Tensor>{slice_cols(g, 0, p),
                                   slice_cols(g, p, p + q)};
      });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  return concat_rows(std::vector<Tensor>{a, b});
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty part list");
  const int n = parts[0].dim(1);
  int m = 0;
  for (const Tensor& t : parts) {
    require_2d("concat_rows", t);
    if (t.dim(1) != n) throw ShapeError("concat_rows: column counts differ");
    m += t.dim(0);
  }
  std::vector<float> out;
  out.reserve(static_cast<size_t>(m) * n);
  for (const Tensor& t : parts)
    out.insert(out.end(), t.values().begin(), t.values().end());

  std::vector<int> offsets;
  int row = 0;
  for (const Tensor& t : parts) {
    offsets.push_back(row);
    row += t.dim(0);
  }
  auto node = std::make_shared<Node>();
  node->shape = {m, n};
  node->value = std::move(out);
  node->op = "concat_rows";
  detail::check_finite(node->value, node->op);
  bool needs_grad = false;
  for (const Tensor& t : parts) needs_grad = needs_grad || t.requires_grad();
  if (needs_grad) {
    node->requires_grad = true;
    for (const Tensor& t : parts) node->parents.push_back(t.node_ptr());
    node->backward_fn = [offsets, n](Node& nd) {
      for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
        Node& p = *nd.parents[pi];
        if (!p.requires_grad) continue;
        const size_t base = static_cast<size_t>(offsets[pi]) * n;
        for (size_t i = 0; i < p.value.size(); ++i)
          p.grad[i] += nd.grad[base + i];
      }
    };
    std::vector<int> rows;
    for (const Tensor& t : parts) rows.push_back(t.dim(0));
    node->backward_graph_fn = [offsets, rows](const Tensor& g) {
      std::vector<Tensor> out_adj;
      for (size_t pi = 0; pi < offsets.size(); ++pi) {
        std::vector<int> idx(static_cast<size_t>(rows[pi]));
        for (int r = 0; r < rows[pi]; ++r) idx[static_cast<size_t>(r)] = offsets[pi] + r;
        out_adj.push_back(gather_rows(g, idx));
      }
      return out_adj;
    };
  }
  return Tensor::wrap(std::move(node));
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& indices) {
  require_2d("gather_rows", a);
  const int m = a.dim(0), n = a.dim(1);
  for (int idx : indices) {
    if (idx < 0 || idx >= m) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) +
                       " out of range for " + std::to_string(m) + " rows");
    }
  }
  const int k = static_cast<int>(indices.size());
  std::vector<float> out(static_cast<size_t>(k) * n);
  for (int r = 0; r < k; ++r)
    std::memcpy(out.data() + static_cast<size_t>(r) * n,
                a.values().data() + static_cast<size_t>(indices[r]) * n,
                sizeof(float) * n);
  auto idx_copy = indices;
  return make_op(
      "gather_rows", {k, n}, std::move(out), {a},
      [idx_copy, n](Node& node) {
        Node& p = *node.parents[0];
        for (size_t r = 0; r < idx_copy.size(); ++r)
          for (int j = 0; j < n; ++j)
            p.grad[static_cast<size_t>(idx_copy[r]) * n + j] +=
                node.grad[r * n + j];
      },
      [idx_copy, m](const Tensor& g) {
        return std::vector<Tensor>{scatter_rows(g, idx_copy, m)};
      });
}

Tensor scatter_rows(const Tensor& a, const std::vector<int>& indices, int m) {
  require_2d("scatter_rows", a);
  const int k = a.dim(0), n = a.dim(1);
  if (static_cast<int>(indices.size()) != k) {
    throw ShapeError("scatter_rows: index count does not match rows");
  }
  std::vector<float> out(static_cast<size_t>(m) * n, 0.0f);
  for (int r = 0; r < k; ++r) {
    if (indices[r] < 0 || indices[r] >= m)
      throw ShapeError("scatter_rows: index out of range");
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(indices[r]) * n + j] += a.at(r, j);
  }
  auto idx_copy = indices;
  return make_op(
      "scatter_rows", {m, n}, std::move(out), {a},
      [idx_copy, n](Node& node) {
        Node& p = *node.parents[0];
        for (size_t r = 0; r < idx_copy.size(); ++r)
          for (int j = 0; j < n; ++j)
            p.grad[r * n + j] +=
                node.grad[static_cast<size_t>(idx_copy[r]) * n + j];
      },
      [idx_copy](const Tensor& g) {
        return std::vector<Tensor>{gather_rows(g, idx_copy)};
      });
}

Tensor slice_cols(const Tensor& a, int from, int to) {
  require_2d("slice_cols", a);
  const int m = a.dim(0), n = a.dim(1);
  if (from < 0 || to > n || from >= to) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(from) + "," +
                     std::to_string(to) + ") for " + shape_str(a.shape()));
  }
  const int w = to - from;
  std::vector<float> out(static_cast<size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    std::memcpy(out.data() + static_cast<size_t>(i) * w,
                a.values().data() + static_cast<size_t>(i) * n + from,
                sizeof(float) * w);
  return make_op(
      "slice_cols", {m, w}, std::move(out), {a},
      [from, w, n, m](Node& node) {
        Node& p = *node.parents[0];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            p.grad[static_cast<size_t>(i) * n + from + j] +=
                node.grad[static_cast<size_t>(i) * w + j];
      },
      [from, n, m, to](const Tensor& g) {
        Tensor padded = g;
        if (from > 0) padded = concat_cols(Tensor::zeros({m, from}), padded);
        if (to < n) padded = concat_cols(padded, Tensor::zeros({m, n - to}));
        return std::vector<Tensor>{padded};
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<float> out(a.values().begin(), a.values().end());
  Shape original = a.shape();
  return make_op(
      "reshape", std::move(shape), std::move(out), {a},
      [](Node& node) { axpy_into(*node.parents[0], node.grad); },
      [original](const Tensor& g) {
        return std::vector<Tensor>{reshape(g, original)};
      });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

inline int wrap_index(int i, int n) {
  i %= n;
  return i < 0 ? i + n : i;
}

// col layout: [h*w, cin*kh*kw]
void im2col(const float* x, int cin, int h, int w, int kh, int kw,
            Padding padding, float* col) {
  const int ph = kh / 2, pw = kw / 2;
  const int patch = cin * kh * kw;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float* dst = col + (static_cast<size_t>(r) * w + c) * patch;
      for (int ci = 0; ci < cin; ++ci) {
        const float* xc = x + static_cast<size_t>(ci) * h * w;
        for (int di = 0; di < kh; ++di) {
          for (int dj = 0; dj < kw; ++dj) {
            int rr = r + di - ph, cc = c + dj - pw;
            float v = 0.0f;
            if (padding == Padding::periodic) {
              v = xc[static_cast<size_t>(wrap_index(rr, h)) * w +
                     wrap_index(cc, w)];
            } else if (rr >= 0 && rr < h && cc >= 0 && cc < w) {
              v = xc[static_cast<size_t>(rr) * w + cc];
            }
            *dst++ = v;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int cin, int h, int w, int kh, int kw,
                Padding padding, float* x) {
  const int ph = kh / 2, pw = kw / 2;
  const int patch = cin * kh * kw;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const float* src = col + (static_cast<size_t>(r) * w + c) * patch;
      for (int ci = 0; ci < cin; ++ci) {
        float* xc = x + static_cast<size_t>(ci) * h * w;
        for (int di = 0; di < kh; ++di) {
          for (int dj = 0; dj < kw; ++dj) {
            int rr = r + di - ph, cc = c + dj - pw;
            const float v = *src++;
            if (padding == Padding::periodic) {
              xc[static_cast<size_t>(wrap_index(rr, h)) * w +
                 wrap_index(cc, w)] += v;
            } else if (rr >= 0 && rr < h && cc >= 0 && cc < w) {
              xc[static_cast<size_t>(rr) * w + cc] += v;
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w,
              const std::optional<Tensor>& bias, Padding padding) {
  if (x.ndim() != 3 || w.ndim() != 4) {
    throw ShapeError("conv2d: expected x[cin,h,w] and w[cout,cin,kh,kw]");
  }
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) throw ShapeError("conv2d: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernels must be odd");
  if (bias && bias->size() != cout) throw ShapeError("conv2d: bad bias size");

  const int patch = cin * kh * kw;
  const int pixels = h * wd;
  std::vector<float> col(static_cast<size_t>(pixels) * patch);
  im2col(x.values().data(), cin, h, wd, kh, kw, padding, col.data());

  // out_hw[pixels, cout] = col @ w_flat^T
  std::vector<float> out_hw(static_cast<size_t>(pixels) * cout, 0.0f);
  gemm_nt(pixels, patch, cout, col.data(), w.values().data(), out_hw.data());

  std::vector<float> out(static_cast<size_t>(cout) * pixels);
  for (int co = 0; co < cout; ++co) {
    const float b = bias ? bias->at(co) : 0.0f;
    for (int px = 0; px < pixels; ++px)
      out[static_cast<size_t>(co) * pixels + px] =
          out_hw[static_cast<size_t>(px) * cout + co] + b;
  }

  std::vector<Tensor> parents{x, w};
  if (bias) parents.push_back(*bias);
  auto node = std::make_shared<Node>();
  node->shape = {cout, h, wd};
  node->value = std::move(out);
  node->op = "conv2d";
  detail::check_finite(node->value, node->op);
  bool needs_grad = false;
  for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  if (needs_grad) {
    node->requires_grad = true;
    for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
    const bool has_bias = bias.has_value();
    node->backward_fn = [cin, h, wd, cout, kh, kw, padding, patch, pixels,
                         has_bias, col = std::move(col)](Node& nd) {
      Node& px_node = *nd.parents[0];
      Node& pw = *nd.parents[1];
      // grad arrives as [cout, pixels]; view as [pixels, cout]
      std::vector<float> g_hw(static_cast<size_t>(pixels) * cout);
      for (int co = 0; co < cout; ++co)
        for (int px = 0; px < pixels; ++px)
          g_hw[static_cast<size_t>(px) * cout + co] =
              nd.grad[static_cast<size_t>(co) * pixels + px];
      if (pw.requires_grad) {
        // dW[cout, patch] += g_hw^T @ col
        gemm_tn(pixels, cout, patch, g_hw.data(), col.data(), pw.grad.data());
      }
      if (px_node.requires_grad) {
        std::vector<float> dcol(static_cast<size_t>(pixels) * patch, 0.0f);
        gemm_nn(pixels, cout, patch, g_hw.data(), pw.value.data(), dcol.data());
        col2im_add(dcol.data(), cin, h, wd, kh, kw, padding,
                   px_node.grad.data());
      }
      if (has_bias && nd.parents[2]->requires_grad) {
        Node& pb = *nd.parents[2];
        for (int co = 0; co < cout; ++co) {
          float s = 0.0f;
          for (int px = 0; px < pixels; ++px)
            s += nd.grad[static_cast<size_t>(co) * pixels + px];
          pb.grad[co] += s;
        }
      }
    };
  }
  return Tensor::wrap(std::move(node));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  return mean_all(square(sub(a, b)));
}

}  // namespace ponp
