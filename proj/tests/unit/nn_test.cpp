#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "viclf/nn.hpp"

namespace viclf::nn {
namespace {

using viclf::testing::check_matrix;
using viclf::testing::check_params;
using viclf::testing::GradCheckResult;

TEST(Softmax, RowsSumToOneAndAreShiftInvariant) {
  std::mt19937_64 rng(1);
  Mat x = randn(5, 7, 3.0, rng);
  Mat p = softmax_rows(x);
  for (int r = 0; r < 5; ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-15);
  Mat shifted = x.array() + 100.0;
  EXPECT_LT((softmax_rows(shifted) - p).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Gelu, KnownValues) {
  Mat x(1, 3);
  x << 0.0, 1.0, -1.0;
  Mat y = gelu(x);
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_NEAR(y(0, 1), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(y(0, 2), -0.15865525393145707, 1e-15);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  Linear lin(4, 3);
  lin.w.value = randn(4, 3, 1.0, rng);
  lin.b.value = randn(1, 3, 1.0, rng);
  Mat x = randn(5, 4, 1.0, rng);
  const Mat probe = randn(5, 3, 1.0, rng);
  ParamList params;
  lin.collect("lin", params);
  auto loss = [&] { return lin.forward(x).cwiseProduct(probe).sum(); };
  Mat dx;
  const GradCheckResult r = check_params(params, loss, [&] { dx = lin.backward(x, probe); });
  EXPECT_LT(r.max_rel_error, 1e-7) << r.worst;
  GradCheckResult rx;
  check_matrix("x", x, dx, loss, rx);
  EXPECT_LT(rx.max_rel_error, 1e-7) << rx.worst;
}

TEST(LayerNorm, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  LayerNorm ln(6);
  ln.gamma.value = randn(1, 6, 1.0, rng);
  ln.beta.value = randn(1, 6, 1.0, rng);
  Mat x = randn(4, 6, 2.0, rng);
  const Mat probe = randn(4, 6, 1.0, rng);
  ParamList params;
  ln.collect("ln", params);
  auto loss = [&] { return ln.forward(x, nullptr).cwiseProduct(probe).sum(); };
  Mat dx;
  const GradCheckResult r = check_params(params, loss, [&] {
    LayerNorm::Cache c;
    ln.forward(x, &c);
    dx = ln.backward(c, probe);
  });
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
  GradCheckResult rx;
  check_matrix("x", x, dx, loss, rx);
  EXPECT_LT(rx.max_rel_error, 1e-6) << rx.worst;
}

TEST(LayerNorm, NormalizesRows) {
  std::mt19937_64 rng(4);
  LayerNorm ln(16);
  Mat y = ln.forward(randn(3, 16, 5.0, rng), nullptr);
  for (int r = 0; r < 3; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 16.0, 1.0, 1e-3);
  }
}

TEST(Attention, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  Mat q = randn(3, 8, 1.0, rng);
  Mat k = randn(5, 8, 1.0, rng);
  Mat v = randn(5, 4, 1.0, rng);
  const Mat probe = randn(3, 4, 1.0, rng);
  auto loss = [&] { return scaled_dot_attention(q, k, v, 2, nullptr).cwiseProduct(probe).sum(); };
  AttentionCache cache;
  scaled_dot_attention(q, k, v, 2, &cache);
  Mat dq, dk, dv;
  scaled_dot_attention_backward(cache, probe, dq, dk, dv);
  GradCheckResult r;
  check_matrix("q", q, dq, loss, r);
  check_matrix("k", k, dk, loss, r);
  check_matrix("v", v, dv, loss, r);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(Attention, SingleKeyIsPassthrough) {
  std::mt19937_64 rng(6);
  const Mat q = randn(4, 6, 1.0, rng);
  const Mat k = randn(1, 6, 1.0, rng);
  const Mat v = randn(1, 6, 1.0, rng);
  const Mat out = scaled_dot_attention(q, k, v, 3, nullptr);
  for (int r = 0; r < 4; ++r) EXPECT_EQ(out.row(r), v.row(0));
}

TEST(ParamHash, SensitiveToValuesAndNames) {
  Param a(Mat::Ones(2, 2));
  Param b(Mat::Ones(2, 2));
  const auto h1 = hash_params({{"a", &a}});
  EXPECT_EQ(h1, hash_params({{"a", &b}}));
  EXPECT_NE(h1, hash_params({{"b", &b}}));
  b.value(1, 1) = std::nextafter(1.0, 2.0);
  EXPECT_NE(h1, hash_params({{"a", &b}}));
}

TEST(ClipGradNorm, RescalesToBound) {
  Param a(Mat::Zero(1, 2));
  a.grad << 3.0, 4.0;
  ParamList list{{"a", &a}};
  clip_grad_norm(list, 1.0);
  EXPECT_NEAR(grad_norm(list), 1.0, 1e-15);
}

}  // namespace
}  // namespace viclf::nn
