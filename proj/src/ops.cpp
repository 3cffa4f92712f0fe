#include "vamp/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <random>

namespace vamp {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

bool tracking(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> values, bool track, const char* op) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = track;
  node->leaf = !track;
  if (debug_checks_enabled()) {
    for (double v : node->value) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + op);
    }
  }
  return Tensor::from_node(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_defined(const Tensor& a, const char* op) {
  if (!a.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k || a.rank() > 2 || b.rank() > 2) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  const bool track = tracking(tape, {&a, &b});
  Tensor result = make_result({m, n}, std::move(out), track, "matmul");
  if (track) {
    NodePtr an = a.node(), bn = b.node(), on = result.node();
    tape->record(result, {&a, &b}, [an, bn, on, m, k, n] {
      if (an->requires_grad) gemm_nt(on->grad.data(), bn->value.data(), an->grad_buffer().data(), m, n, k);
      if (bn->requires_grad) gemm_tn(an->value.data(), on->grad.data(), bn->grad_buffer().data(), m, k, n);
    });
  }
  return result;
}

Tensor transpose(Tape* tape, const Tensor& a) {
  require_defined(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  const bool track = tracking(tape, {&a});
  Tensor result = make_result({c, r}, std::move(out), track, "transpose");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    tape->record(result, {&a}, [an, on, r, c] {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += on->grad[j * r + i];
    });
  }
  return result;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  const bool track = tracking(tape, {&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), track, "add");
  if (track) {
    NodePtr an = a.node(), bn = b.node(), on = result.node();
    tape->record(result, {&a, &b}, [an, bn, on] {
      for (auto* in : {an.get(), bn.get()}) {
        if (!in->requires_grad) continue;
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
    });
  }
  return result;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  const bool track = tracking(tape, {&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), track, "sub");
  if (track) {
    NodePtr an = a.node(), bn = b.node(), on = result.node();
    tape->record(result, {&a, &b}, [an, bn, on] {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= on->grad[i];
      }
    });
  }
  return result;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  const bool track = tracking(tape, {&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), track, "mul");
  if (track) {
    NodePtr an = a.node(), bn = b.node(), on = result.node();
    tape->record(result, {&a, &b}, [an, bn, on] {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return result;
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  require_defined(a, "scale");
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  const bool track = tracking(tape, {&a});
  Tensor result = make_result(a.shape(), std::move(out), track, "scale");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    tape->record(result, {&a}, [an, on, s] {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * s;
    });
  }
  return result;
}

Tensor add_row_vector(Tape* tape, const Tensor& a, const Tensor& v) {
  require_defined(a, "add_row_vector");
  const std::size_t r = a.rows(), c = a.cols();
  if (v.size() != c) {
    throw DimensionError("add_row_vector: " + shape_str(a.shape()) + " with bias " + shape_str(v.shape()));
  }
  std::vector<double> out(a.size());
  const auto x = a.data(), b = v.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
  const bool track = tracking(tape, {&a, &v});
  Tensor result = make_result(a.shape(), std::move(out), track, "add_row_vector");
  if (track) {
    NodePtr an = a.node(), vn = v.node(), on = result.node();
    tape->record(result, {&a, &v}, [an, vn, on, r, c] {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (vn->requires_grad) {
        auto& g = vn->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[j] += on->grad[i * c + j];
      }
    });
  }
  return result;
}

Tensor exp(Tape* tape, const Tensor& a) {
  require_defined(a, "exp");
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  const bool track = tracking(tape, {&a});
  Tensor result = make_result(a.shape(), std::move(out), track, "exp");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    tape->record(result, {&a}, [an, on] {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * on->value[i];
    });
  }
  return result;
}

Tensor clamp(Tape* tape, const Tensor& a, double lo, double hi) {
  require_defined(a, "clamp");
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
  const bool track = tracking(tape, {&a});
  Tensor result = make_result(a.shape(), std::move(out), track, "clamp");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    tape->record(result, {&a}, [an, on, lo, hi] {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = an->value[i];
        if (v >= lo && v <= hi) g[i] += on->grad[i];
      }
    });
  }
  return result;
}

namespace {
std::atomic<double> g_gelu_fault{1.0};
}  // namespace

void set_gelu_backward_fault(double factor) { g_gelu_fault.store(factor); }

Tensor gelu(Tape* tape, const Tensor& a) {
  require_defined(a, "gelu");
  constexpr double kC = 0.044715;
  const double k = std::sqrt(2.0 / std::numbers::pi);
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(k * (v + kC * v * v * v)));
  }
  const bool track = tracking(tape, {&a});
  Tensor result = make_result(a.shape(), std::move(out), track, "gelu");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    const double fault = g_gelu_fault.load();
    tape->record(result, {&a}, [an, on, k, fault] {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = an->value[i];
        const double t = std::tanh(k * (v + kC * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * kC * v * v);
        g[i] += on->grad[i] * d * fault;
      }
    });
  }
  return result;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require_defined(x, "layer_norm");
  const std::size_t r = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()) +
                         " and beta " + shape_str(beta.shape()));
  }
  std::vector<double> out(x.size()), xhat(x.size()), rstd(r);
  const auto in = x.data(), gm = gamma.data(), bt = beta.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gm[j] + bt[j];
    }
  }
  const bool track = tracking(tape, {&x, &gamma, &beta});
  Tensor result = make_result(x.shape(), std::move(out), track, "layer_norm");
  if (track) {
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), on = result.node();
    tape->record(result, {&x, &gamma, &beta},
                 [xn, gn, bn, on, r, d, xhat = std::move(xhat), rstd = std::move(rstd)] {
                   const auto& go = on->grad;
                   if (gn->requires_grad) {
                     auto& g = gn->grad_buffer();
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < d; ++j) g[j] += go[i * d + j] * xhat[i * d + j];
                   }
                   if (bn->requires_grad) {
                     auto& g = bn->grad_buffer();
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < d; ++j) g[j] += go[i * d + j];
                   }
                   if (xn->requires_grad) {
                     auto& g = xn->grad_buffer();
                     const double inv_d = 1.0 / static_cast<double>(d);
                     for (std::size_t i = 0; i < r; ++i) {
                       double mean_dy = 0.0, mean_dy_xhat = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dy = go[i * d + j] * gn->value[j];
                         mean_dy += dy;
                         mean_dy_xhat += dy * xhat[i * d + j];
                       }
                       mean_dy *= inv_d;
                       mean_dy_xhat *= inv_d;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dy = go[i * d + j] * gn->value[j];
                         g[i * d + j] += rstd[i] * (dy - mean_dy - xhat[i * d + j] * mean_dy_xhat);
                       }
                     }
                   }
                 });
  }
  return result;
}

Tensor softmax_rows(Tape* tape, const Tensor& x) {
  require_defined(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw DimensionError("softmax_rows: empty last dimension in " + shape_str(x.shape()));
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  const bool track = tracking(tape, {&x});
  Tensor result = make_result(x.shape(), std::move(out), track, "softmax_rows");
  if (track) {
    NodePtr xn = x.node(), on = result.node();
    tape->record(result, {&x}, [xn, on, r, c] {
      auto& g = xn->grad_buffer();
      const auto& y = on->value;
      const auto& go = on->grad;
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[i * c + j] * (go[i * c + j] - dot);
      }
    });
  }
  return result;
}

Tensor log_softmax_rows(Tape* tape, const Tensor& x) {
  require_defined(x, "log_softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw DimensionError("log_softmax_rows: empty last dimension in " + shape_str(x.shape()));
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  const bool track = tracking(tape, {&x});
  Tensor result = make_result(x.shape(), std::move(out), track, "log_softmax_rows");
  if (track) {
    NodePtr xn = x.node(), on = result.node();
    tape->record(result, {&x}, [xn, on, r, c] {
      auto& g = xn->grad_buffer();
      const auto& y = on->value;
      const auto& go = on->grad;
      for (std::size_t i = 0; i < r; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += go[i * c + j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += go[i * c + j] - std::exp(y[i * c + j]) * total;
      }
    });
  }
  return result;
}

Tensor normalize_rows(Tape* tape, const Tensor& x) {
  require_defined(x, "normalize_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size()), norms(r);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += in[i * c + j] * in[i * c + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw NumericError("normalize_rows: zero-norm row " + std::to_string(i));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = in[i * c + j] / norms[i];
  }
  const bool track = tracking(tape, {&x});
  Tensor result = make_result(x.shape(), std::move(out), track, "normalize_rows");
  if (track) {
    NodePtr xn = x.node(), on = result.node();
    tape->record(result, {&x}, [xn, on, r, c, norms = std::move(norms)] {
      auto& g = xn->grad_buffer();
      const auto& y = on->value;
      const auto& go = on->grad;
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += (go[i * c + j] - y[i * c + j] * dot) / norms[i];
      }
    });
  }
  return result;
}

Tensor sum(Tape* tape, const Tensor& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  const bool track = tracking(tape, {&a});
  Tensor result = make_result({}, {s}, track, "sum");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    tape->record(result, {&a}, [an, on] {
      auto& g = an->grad_buffer();
      for (auto& v : g) v += on->grad[0];
    });
  }
  return result;
}

Tensor mean(Tape* tape, const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

Tensor element(Tape* tape, const Tensor& a, std::size_t index) {
  if (index >= a.size()) {
    throw DimensionError("element: index " + std::to_string(index) + " out of range for " + shape_str(a.shape()));
  }
  const bool track = tracking(tape, {&a});
  Tensor result = make_result({}, {a.data()[index]}, track, "element");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    tape->record(result, {&a}, [an, on, index] { an->grad_buffer()[index] += on->grad[0]; });
  }
  return result;
}

Tensor reshape(Tape* tape, const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  const bool track = tracking(tape, {&a});
  Tensor result = make_result(std::move(shape), a.to_vector(), track, "reshape");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    tape->record(result, {&a}, [an, on] {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    });
  }
  return result;
}

Tensor slice_rows(Tape* tape, const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t c = a.cols();
  if (begin > end || end > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(a.shape()));
  }
  const auto in = a.data();
  std::vector<double> out(in.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          in.begin() + static_cast<std::ptrdiff_t>(end * c));
  const bool track = tracking(tape, {&a});
  Tensor result = make_result({end - begin, c}, std::move(out), track, "slice_rows");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    tape->record(result, {&a}, [an, on, begin, c] {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < on->grad.size(); ++i) g[begin * c + i] += on->grad[i];
    });
  }
  return result;
}

Tensor slice_cols(Tape* tape, const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t r = a.rows(), c = a.cols();
  if (begin > end || end > c) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  const auto in = a.data();
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = in[i * c + begin + j];
  const bool track = tracking(tape, {&a});
  Tensor result = make_result({r, w}, std::move(out), track, "slice_cols");
  if (track) {
    NodePtr an = a.node(), on = result.node();
    tape->record(result, {&a}, [an, on, r, c, w, begin] {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += on->grad[i * w + j];
    });
  }
  return result;
}

Tensor concat_rows(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw DimensionError("concat_rows: width mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    r += p.rows();
    track = track || (tape && p.requires_grad());
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result = make_result({r, c}, std::move(out), track, "concat_rows");
  if (track) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    NodePtr on = result.node();
    tape->record(result, parts, [nodes, on] {
      std::size_t offset = 0;
      for (const auto& n : nodes) {
        if (n->requires_grad) {
          auto& g = n->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[offset + i];
        }
        offset += n->value.size();
      }
    });
  }
  return result;
}

Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    c += p.cols();
    track = track || (tape && p.requires_grad());
  }
  std::vector<double> out(r * c);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    const auto in = p.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * c + offset + j] = in[i * w + j];
    offset += w;
  }
  Tensor result = make_result({r, c}, std::move(out), track, "concat_cols");
  if (track) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    NodePtr on = result.node();
    tape->record(result, parts, [nodes, on, r, c] {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        const std::size_t w = n->value.size() / std::max<std::size_t>(r, 1);
        if (n->requires_grad) {
          auto& g = n->grad_buffer();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * w + j] += on->grad[i * c + off + j];
        }
        off += w;
      }
    });
  }
  return result;
}

Tensor gaussian_kl(Tape* tape, const Tensor& mu_q, const Tensor& log_var_q, const Tensor& mu_p,
                   const Tensor& log_var_p) {
  require_same_shape(mu_q, log_var_q, "gaussian_kl");
  require_same_shape(mu_q, mu_p, "gaussian_kl");
  require_same_shape(mu_q, log_var_p, "gaussian_kl");
  const auto mq = mu_q.data(), lq = log_var_q.data(), mp = mu_p.data(), lp = log_var_p.data();
  double total = 0.0;
  for (std::size_t i = 0; i < mq.size(); ++i) {
    const double diff = mq[i] - mp[i];
    total += 0.5 * (lp[i] - lq[i] + (std::exp(lq[i]) + diff * diff) / std::exp(lp[i]) - 1.0);
  }
  const bool track = tracking(tape, {&mu_q, &log_var_q, &mu_p, &log_var_p});
  Tensor result = make_result({}, {total}, track, "gaussian_kl");
  if (track) {
    NodePtr a = mu_q.node(), b = log_var_q.node(), c = mu_p.node(), d = log_var_p.node(), on = result.node();
    tape->record(result, {&mu_q, &log_var_q, &mu_p, &log_var_p}, [a, b, c, d, on] {
      const double g = on->grad[0];
      const std::size_t n = a->value.size();
      for (std::size_t i = 0; i < n; ++i) {
        const double vp = std::exp(d->value[i]);
        const double vq = std::exp(b->value[i]);
        const double diff = a->value[i] - c->value[i];
        if (a->requires_grad) a->grad_buffer()[i] += g * diff / vp;
        if (c->requires_grad) c->grad_buffer()[i] -= g * diff / vp;
        if (b->requires_grad) b->grad_buffer()[i] += g * 0.5 * (vq / vp - 1.0);
        if (d->requires_grad) d->grad_buffer()[i] += g * 0.5 * (1.0 - (vq + diff * diff) / vp);
      }
    });
  }
  return result;
}

std::vector<Tensor*> TransformerBlockParams::tensors() {
  return {&ln1_gamma, &ln1_beta, &w_qkv, &b_qkv, &w_out, &b_out,
          &ln2_gamma, &ln2_beta, &w_fc1, &b_fc1, &w_fc2, &b_fc2};
}

std::vector<const Tensor*> TransformerBlockParams::tensors() const {
  return {&ln1_gamma, &ln1_beta, &w_qkv, &b_qkv, &w_out, &b_out,
          &ln2_gamma, &ln2_beta, &w_fc1, &b_fc1, &w_fc2, &b_fc2};
}

Tensor attention_block(Tape* tape, const Tensor& x, const TransformerBlockParams& p, std::size_t heads,
                       AttentionTrace* trace) {
  const std::size_t t = x.rows(), d = x.cols();
  if (t == 0) throw DimensionError("attention_block: empty sequence");
  if (d != p.width()) {
    throw DimensionError("attention_block: input " + shape_str(x.shape()) + " for block width " +
                         std::to_string(p.width()));
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention_block: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor h = layer_norm(tape, x, p.ln1_gamma, p.ln1_beta);
  Tensor qkv = add_row_vector(tape, matmul(tape, h, p.w_qkv), p.b_qkv);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t k = 0; k < heads; ++k) {
    Tensor q = slice_cols(tape, qkv, k * hd, (k + 1) * hd);
    Tensor kk = slice_cols(tape, qkv, d + k * hd, d + (k + 1) * hd);
    Tensor v = slice_cols(tape, qkv, 2 * d + k * hd, 2 * d + (k + 1) * hd);
    Tensor scores = scale(tape, matmul(tape, q, transpose(tape, kk)), inv_sqrt);
    Tensor attn = softmax_rows(tape, scores);
    if (trace) trace->weights.push_back(attn.detach());
    head_out.push_back(matmul(tape, attn, v));
  }
  Tensor merged = heads == 1 ? head_out.front() : concat_cols(tape, head_out);
  Tensor attn_out = add_row_vector(tape, matmul(tape, merged, p.w_out), p.b_out);
  Tensor resid = add(tape, x, attn_out);

  Tensor m = layer_norm(tape, resid, p.ln2_gamma, p.ln2_beta);
  m = gelu(tape, add_row_vector(tape, matmul(tape, m, p.w_fc1), p.b_fc1));
  m = add_row_vector(tape, matmul(tape, m, p.w_fc2), p.b_fc2);
  return add(tape, resid, m);
}

PcaResult pca_project_2d(const Tensor& rows, int max_iters, double tol) {
  const std::size_t n = rows.rows(), d = rows.cols();
  if (n < 2) throw DimensionError("pca_project_2d: need at least 2 rows, got " + std::to_string(n));
  if (d < 2) throw DimensionError("pca_project_2d: need at least 2 columns");

  const auto in = rows.data();
  std::vector<double> centered(n * d), mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += in[i * d + j];
  for (auto& m : mu) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = in[i * d + j] - mu[j];

  std::vector<double> cov(d * d, 0.0);
  gemm_tn(centered.data(), centered.data(), cov.data(), n, d, d);
  for (auto& c : cov) c /= static_cast<double>(n - 1);

  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal;
  PcaResult result;
  std::vector<double> prev;
  auto normalize = [](std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    if (s > 0.0)
      for (double& x : v) x /= s;
    return s;
  };
  for (int comp = 0; comp < 2; ++comp) {
    std::vector<double> v(d);
    for (auto& x : v) x = normal(rng);
    auto orthogonalize = [&](std::vector<double>& w) {
      if (prev.empty()) return;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += w[j] * prev[j];
      for (std::size_t j = 0; j < d; ++j) w[j] -= dot * prev[j];
    };
    orthogonalize(v);
    normalize(v);
    for (int it = 0; it < max_iters; ++it) {
      std::vector<double> w(d, 0.0);
      gemm_nn(cov.data(), v.data(), w.data(), d, d, 1);
      orthogonalize(w);
      if (normalize(w) == 0.0) break;  // remaining variance is zero; keep v
      double delta = 0.0;
      for (std::size_t j = 0; j < d; ++j) delta = std::max(delta, std::abs(w[j] - v[j]));
      v = std::move(w);
      if (delta < tol) break;
    }
    std::vector<double> cv(d, 0.0);
    gemm_nn(cov.data(), v.data(), cv.data(), d, d, 1);
    double lambda = 0.0;
    for (std::size_t j = 0; j < d; ++j) lambda += v[j] * cv[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    result.explained.push_back(std::max(lambda, 0.0));
    result.components.insert(result.components.end(), v.begin(), v.end());
    prev = v;
  }

  std::vector<double> coords(n * 2, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t j = 0; j < d; ++j) coords[i * 2 + c] += centered[i * d + j] * result.components[c * d + j];
  result.coords = Tensor({n, 2}, std::move(coords));
  return result;
}

}  // namespace vamp
