#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "vamp/ops.hpp"

using namespace vamp;
using vamp::testutil::max_grad_error;
using vamp::testutil::random_param;
using vamp::testutil::weighted_sum;

namespace {

TransformerBlockParams random_block(std::size_t d, Rng& rng, bool grad) {
  TransformerBlockParams p;
  auto make = [&](Shape s, double sd) { return grad ? random_param(std::move(s), rng, sd) : gaussian_tensor(std::move(s), sd, rng); };
  p.ln1_gamma = make({d}, 0.3);
  for (double& v : p.ln1_gamma.mutable_data()) v += 1.0;
  p.ln1_beta = make({d}, 0.1);
  p.w_qkv = make({d, 3 * d}, 1.0 / std::sqrt(double(d)));
  p.b_qkv = make({3 * d}, 0.1);
  p.w_out = make({d, d}, 1.0 / std::sqrt(double(d)));
  p.b_out = make({d}, 0.1);
  p.ln2_gamma = make({d}, 0.3);
  for (double& v : p.ln2_gamma.mutable_data()) v += 1.0;
  p.ln2_beta = make({d}, 0.1);
  p.w_fc1 = make({d, 4 * d}, 1.0 / std::sqrt(double(d)));
  p.b_fc1 = make({4 * d}, 0.1);
  p.w_fc2 = make({4 * d, d}, 1.0 / std::sqrt(double(4 * d)));
  p.b_fc2 = make({d}, 0.1);
  return p;
}

// Cyclic Jacobi rotations for a symmetric matrix; returns eigenvalues in descending order.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

}  // namespace

TEST(Matmul, IdentityTimesIdentity) {
  Tensor i2 = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor r = matmul(nullptr, i2, i2);
  EXPECT_EQ(r.to_vector(), i2.to_vector());
}

TEST(Matmul, HandArithmetic) {
  Tensor r = matmul(nullptr, Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
  EXPECT_EQ(r.shape(), (Shape{2, 1}));
  EXPECT_EQ(r.to_vector(), (std::vector<double>{3, 7}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(nullptr, Tensor({2, 3}), Tensor({4, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  Tensor a = random_param({5, 7}, rng), b = random_param({7, 3}, rng);
  Tensor w = gaussian_tensor({5, 3}, 1.0, rng);
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, matmul(t, a, b), w); }, {&a, &b}), 1e-6);
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  Tensor x = Tensor::matrix({{3, 3, 3, 3}});
  Tensor y = layer_norm(nullptr, x, Tensor({4}, 1.0), Tensor({4}, 0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowIsNearlyUnchanged) {
  Tensor y = layer_norm(nullptr, Tensor::matrix({{1, -1}}), Tensor({2}, 1.0), Tensor({2}, 0.0));
  // Variance is 1, so the only change is the eps correction 1/sqrt(1 + 1e-5).
  const double k = 1.0 / std::sqrt(1.0 + kLayerNormEps);
  EXPECT_NEAR(y.data()[0], k, 1e-15);
  EXPECT_NEAR(y.data()[1], -k, 1e-15);
}

TEST(LayerNorm, WidthMismatch) {
  EXPECT_THROW(layer_norm(nullptr, Tensor({2, 3}), Tensor({4}, 1.0), Tensor({4}, 0.0)), DimensionError);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  Tensor x = random_param({3, 8}, rng), g = random_param({8}, rng), b = random_param({8}, rng);
  Tensor w = gaussian_tensor({3, 8}, 1.0, rng);
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, layer_norm(t, x, g, b), w); }, {&x, &g, &b}),
            1e-5);
}

TEST(Gelu, FixedPoints) {
  Tensor y = gelu(nullptr, Tensor::row({0.0, 30.0, -30.0}));
  EXPECT_EQ(y.data()[0], 0.0);
  EXPECT_NEAR(y.data()[1], 30.0, 1e-12);
  EXPECT_NEAR(y.data()[2], 0.0, 1e-12);
}

TEST(Gelu, ValueAtOneMatchesHighPrecisionOracle) {
  // 0.5 (1 + tanh(sqrt(2/pi) (1 + 0.044715))) evaluated with 40-digit arithmetic.
  constexpr double kOracle = 0.8411919906082767047819958;
  EXPECT_NEAR(gelu(nullptr, Tensor::row({1.0})).item(), kOracle, 1e-15);
}

TEST(Gelu, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  Tensor x = random_param({4, 5}, rng, 2.0);
  Tensor w = gaussian_tensor({4, 5}, 1.0, rng);
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, gelu(t, x), w); }, {&x}), 1e-6);
}

TEST(Softmax, EqualInputsAreUniform) {
  Tensor y = softmax_rows(nullptr, Tensor::row({2.5, 2.5, 2.5}));
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, TwoClassValueMatchesOracle) {
  Tensor y = softmax_rows(nullptr, Tensor::row({1.0, 0.0}));
  EXPECT_NEAR(y.data()[0], 0.7310585786300048792511592, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.2689414213699951207488408, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(4);
  Tensor x = gaussian_tensor({6, 9}, 5.0, rng);
  Tensor y = softmax_rows(nullptr, x);
  Tensor shifted = x.clone();
  for (double& v : shifted.mutable_data()) v += 123.456;
  Tensor ys = softmax_rows(nullptr, shifted);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      s += y(r, c);
      EXPECT_NEAR(y(r, c), ys(r, c), 1e-12);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, EmptyRowIsAnError) { EXPECT_THROW(softmax_rows(nullptr, Tensor({2, 0})), DimensionError); }

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor x = random_param({3, 4}, rng);
  Tensor w = gaussian_tensor({3, 4}, 1.0, rng);
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, softmax_rows(t, x), w); }, {&x}), 1e-6);
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, log_softmax_rows(t, x), w); }, {&x}), 1e-6);
}

TEST(Ops, ElementwiseAndStructuralGradients) {
  Rng rng(6);
  Tensor a = random_param({3, 4}, rng), b = random_param({3, 4}, rng), v = random_param({4}, rng);
  Tensor w = gaussian_tensor({3, 4}, 1.0, rng);
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, sub(t, mul(t, a, b), scale(t, a, 0.3)), w); },
                           {&a, &b}),
            1e-6);
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, add_row_vector(t, a, v), w); }, {&a, &v}), 1e-6);
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, vamp::exp(t, scale(t, a, 0.5)), w); }, {&a}), 1e-6);
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, normalize_rows(t, a), w); }, {&a}), 1e-6);
  EXPECT_LE(max_grad_error(
                [&](Tape* t) {
                  Tensor top = slice_rows(t, a, 0, 2), right = slice_cols(t, b, 1, 4);
                  Tensor cat = concat_rows(t, {top, slice_rows(t, b, 2, 3)});
                  Tensor cc = concat_cols(t, {slice_cols(t, cat, 0, 1), slice_cols(t, a, 0, 3)});
                  return add(t, sum(t, mul(t, cc, w)), add(t, mean(t, right), element(t, transpose(t, a), 5)));
                },
                {&a, &b}),
            1e-6);
}

TEST(Ops, ClampPassesGradientOnlyInside) {
  Tensor x = Tensor::parameter({3}, {-20.0, 0.5, 20.0});
  Tape tape;
  tape.backward(sum(&tape, clamp(&tape, x, -10.0, 10.0)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(Ops, NormalizeZeroRowIsNumericError) {
  EXPECT_THROW(normalize_rows(nullptr, Tensor({1, 3}, 0.0)), NumericError);
}

TEST(GaussianKl, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor mq = random_param({2, 3}, rng), lq = random_param({2, 3}, rng, 0.5);
  Tensor mp = random_param({2, 3}, rng), lp = random_param({2, 3}, rng, 0.5);
  EXPECT_LE(max_grad_error([&](Tape* t) { return gaussian_kl(t, mq, lq, mp, lp); }, {&mq, &lq, &mp, &lp}), 1e-6);
}

TEST(Attention, SingleTokenAttendsToItself) {
  Rng rng(8);
  auto p = random_block(8, rng, false);
  AttentionTrace trace;
  attention_block(nullptr, gaussian_tensor({1, 8}, 1.0, rng), p, 2, &trace);
  ASSERT_EQ(trace.weights.size(), 2u);
  for (const auto& w : trace.weights) EXPECT_EQ(w.item(), 1.0);
}

TEST(Attention, IdenticalTokensStayIdentical) {
  Rng rng(9);
  auto p = random_block(8, rng, false);
  Tensor tok = gaussian_tensor({1, 8}, 1.0, rng);
  Tensor other = gaussian_tensor({1, 8}, 1.0, rng);
  Tensor y = attention_block(nullptr, concat_rows(nullptr, {tok, other, tok}), p, 4);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y(0, c), y(2, c));
}

TEST(Attention, HeadCountMustDivideWidth) {
  Rng rng(10);
  auto p = random_block(8, rng, false);
  EXPECT_THROW(attention_block(nullptr, Tensor({2, 8}, 1.0), p, 3), ConfigError);
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  auto p = random_block(16, rng, true);
  Tensor x = random_param({4, 16}, rng);
  Tensor w = gaussian_tensor({4, 16}, 1.0, rng);
  std::vector<Tensor*> inputs{&x};
  for (Tensor* t : p.tensors()) inputs.push_back(t);
  // Key biases shift every score in a row equally, so their true gradient is
  // zero; the floor keeps round-off there from reading as relative error.
  EXPECT_LE(max_grad_error([&](Tape* t) { return weighted_sum(t, attention_block(t, x, p, 4), w); }, inputs, 1e-5,
                           1e-6),
            1e-4);
}

TEST(Pca, PlanarDataKeepsPairwiseDistances) {
  Rng rng(12);
  // Orthonormal plane in R^8 from Gram-Schmidt.
  std::vector<double> u(8), v(8);
  std::normal_distribution<double> n;
  for (auto& x : u) x = n(rng);
  for (auto& x : v) x = n(rng);
  auto norm = [](std::vector<double>& a) {
    double s = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    for (auto& x : a) x /= s;
  };
  norm(u);
  const double d = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
  for (std::size_t i = 0; i < 8; ++i) v[i] -= d * u[i];
  norm(v);
  const std::size_t rows = 12;
  std::vector<double> pts(rows * 8);
  for (std::size_t i = 0; i < rows; ++i) {
    const double a = n(rng) * 3, b = n(rng);
    for (std::size_t j = 0; j < 8; ++j) pts[i * 8 + j] = 2.0 + a * u[j] + b * v[j];
  }
  auto r = pca_project_2d(Tensor({rows, 8}, pts));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = i + 1; k < rows; ++k) {
      double orig = 0.0;
      for (std::size_t j = 0; j < 8; ++j) orig += std::pow(pts[i * 8 + j] - pts[k * 8 + j], 2);
      const double proj = std::pow(r.coords(i, 0) - r.coords(k, 0), 2) + std::pow(r.coords(i, 1) - r.coords(k, 1), 2);
      EXPECT_NEAR(std::sqrt(orig), std::sqrt(proj), 1e-6);
    }
  }
}

TEST(Pca, DuplicateRowsProjectTogether) {
  Rng rng(13);
  Tensor base = gaussian_tensor({5, 6}, 1.0, rng);
  Tensor rows = concat_rows(nullptr, {base, slice_rows(nullptr, base, 2, 3)});
  auto r = pca_project_2d(rows);
  EXPECT_EQ(r.coords(2, 0), r.coords(5, 0));
  EXPECT_EQ(r.coords(2, 1), r.coords(5, 1));
}

TEST(Pca, ExplainedVarianceMatchesJacobiOracle) {
  Rng rng(14);
  Tensor x = gaussian_tensor({10, 6}, 1.0, rng);
  // Give the data distinct spreads per axis so the top eigenvalues are separated.
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 6; ++j) x.mutable_data()[i * 6 + j] *= 1.0 + double(j);
  auto r = pca_project_2d(x);
  std::vector<double> mu(6, 0.0), cov(36, 0.0);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 6; ++j) mu[j] += x(i, j) / 10.0;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = 0; b < 6; ++b) cov[a * 6 + b] += (x(i, a) - mu[a]) * (x(i, b) - mu[b]) / 9.0;
  const auto ev = jacobi_eigenvalues(cov, 6);
  ASSERT_EQ(r.explained.size(), 2u);
  EXPECT_GE(r.explained[0], r.explained[1]);
  EXPECT_GE(r.explained[1], 0.0);
  EXPECT_NEAR(r.explained[0], ev[0], 1e-6 * ev[0]);
  EXPECT_NEAR(r.explained[1], ev[1], 1e-6 * ev[0]);
}

TEST(Pca, NeedsTwoRows) { EXPECT_THROW(pca_project_2d(Tensor({1, 4}, 1.0)), DimensionError); }
