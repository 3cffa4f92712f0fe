#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "vamp/ops.hpp"
#include "vamp/tensor.hpp"

using namespace vamp;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5, 0.0)), DimensionError);
  Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Tensor, RejectsNonFiniteValues) {
  EXPECT_THROW(Tensor({1}, std::vector<double>{std::numeric_limits<double>::quiet_NaN()}), NumericError);
  EXPECT_THROW(Tensor({1}, std::numeric_limits<double>::infinity()), NumericError);
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor a = Tensor::row({1, 2, 3});
  Tensor b = a;
  Tensor c = a.clone();
  a.mutable_data()[0] = 9;
  EXPECT_EQ(b.data()[0], 9);
  EXPECT_EQ(c.data()[0], 1);
}

TEST(Tensor, GradBufferMatchesShape) {
  Tensor x = Tensor::parameter({2, 2}, {1, 2, 3, 4});
  Tape tape;
  tape.backward(sum(&tape, x));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), x.size());
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::parameter({2, 3}, {1, -2, 3, 0.5, 7, -1});
  Tape tape;
  tape.backward(sum(&tape, x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceX) {
  Tensor x = Tensor::parameter({1}, {1.75});
  Tape tape;
  tape.backward(sum(&tape, mul(&tape, x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.5);
}

TEST(Backward, DoubleBackwardWithoutResetIsAnError) {
  Tensor x = Tensor::parameter({1}, {2.0});
  Tape tape;
  Tensor loss = sum(&tape, x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), std::logic_error);
  tape.reset();
  Tensor loss2 = sum(&tape, x);
  EXPECT_NO_THROW(tape.backward(loss2));
}

TEST(Backward, NonScalarLossIsAnError) {
  Tensor x = Tensor::parameter({3}, {1, 2, 3});
  Tape tape;
  Tensor y = scale(&tape, x, 2.0);
  EXPECT_THROW(tape.backward(y), DimensionError);
}

TEST(Backward, LossMustComeFromThisTape) {
  Tensor x = Tensor::parameter({2}, {1, 2});
  Tape a, b;
  Tensor la = sum(&a, x);
  EXPECT_THROW(b.backward(la), std::logic_error);
}

TEST(Backward, EveryLeafGetsAGrad) {
  Tensor used = Tensor::parameter({2}, {1, 2});
  Tensor zero_path = Tensor::parameter({2}, {3, 4});
  Tape tape;
  // zero_path enters the graph but contributes nothing to the loss value.
  Tensor loss = sum(&tape, add(&tape, used, scale(&tape, zero_path, 0.0)));
  tape.backward(loss);
  EXPECT_TRUE(used.has_grad());
  EXPECT_TRUE(zero_path.has_grad());
  for (double g : zero_path.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ReplaysInReverseOrder) {
  Tensor x = Tensor::parameter({1}, {1.0});
  Tape tape;
  std::vector<int> visited;
  Tensor a = scale(&tape, x, 1.0);
  tape.record(a, {&x}, [&] { visited.push_back(1); });
  Tensor b = scale(&tape, a, 1.0);
  tape.record(b, {&a}, [&] { visited.push_back(2); });
  Tensor c = sum(&tape, b);
  tape.record(c, {&b}, [&] { visited.push_back(3); });
  tape.backward(c);
  EXPECT_EQ(visited, (std::vector<int>{3, 2, 1}));
}

TEST(Backward, LinearityOfLosses) {
  Rng rng(5);
  Tensor x = testutil::random_param({3, 4}, rng);
  Tensor w = gaussian_tensor({4, 2}, 1.0, rng);
  auto f1 = [&](Tape* t) { return sum(t, gelu(t, matmul(t, x, w))); };
  auto f2 = [&](Tape* t) { return sum(t, mul(t, x, x)); };
  auto grad_of = [&](auto fn) {
    Tape tape;
    x.zero_grad();
    tape.backward(fn(&tape));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto g1 = grad_of(f1);
  const auto g2 = grad_of(f2);
  const auto g12 = grad_of([&](Tape* t) { return add(t, f1(t), f2(t)); });
  for (std::size_t i = 0; i < g12.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-12);
}

TEST(DebugChecks, CatchNonFiniteOpOutputs) {
  const bool before = debug_checks_enabled();
  set_debug_checks(true);
  Tensor big = Tensor::row({800.0});
  EXPECT_THROW(vamp::exp(nullptr, big), NumericError);
  set_debug_checks(before);
}
