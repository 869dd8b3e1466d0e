#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mtscan/autodiff.hpp"
#include "mtscan/error.hpp"
#include "mtscan/ops.hpp"
#include "mtscan/random.hpp"

using namespace mtscan;

namespace {

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng = make_rng(seed, 99);
  return sum(mul(y, normal_tensor(y.shape(), 1.0, rng)));
}

double check_unary(const std::function<Tensor(const Tensor&)>& op, Shape shape, std::uint64_t seed = 1) {
  Rng rng = make_rng(seed);
  const Tensor x = normal_tensor(shape, 1.0, rng);
  return grad_check([&](const Tensor& v) { return weighted_sum(op(v), seed); }, x);
}

}  // namespace

TEST(Tensor, FactoriesAndShapes) {
  const Tensor z = Tensor::zeros({2, 3});
  EXPECT_EQ(z.numel(), 6u);
  EXPECT_EQ(z.rank(), 2u);
  EXPECT_EQ(shape_str({2, 3}), "[2,3]");
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::zeros({2}).item(), ShapeError);
  EXPECT_DOUBLE_EQ(Tensor::scalar(3.5).item(), 3.5);
}

TEST(Tensor, NonFiniteResultsThrow) {
  const Tensor x = Tensor::from_data({1}, {1000.0});
  EXPECT_THROW(exp(x), NumericalError);
}

TEST(Ops, ElementwiseValues) {
  const Tensor a = Tensor::from_data({2}, {1.0, -2.0});
  const Tensor b = Tensor::from_data({2}, {3.0, 4.0});
  const Tensor c = add(a, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{4, 2}));
  EXPECT_DOUBLE_EQ(mul(a, b).at(1), -8.0);
  EXPECT_DOUBLE_EQ(sub(a, b).at(0), -2.0);
  EXPECT_NEAR(softplus(Tensor::from_data({1}, {0.0})).at(0), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::from_data({1}, {0.0})).at(0), 0.5);
  EXPECT_NEAR(silu(Tensor::from_data({1}, {1.0})).at(0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_DOUBLE_EQ(affine(a, 2.0, 1.0).at(1), -3.0);
}

TEST(Ops, SoftplusStaysFiniteForLargeInputs) {
  const Tensor y = softplus(Tensor::from_data({2}, {800.0, -800.0}));
  EXPECT_DOUBLE_EQ(y.at(0), 800.0);
  EXPECT_GE(y.at(1), 0.0);
}

TEST(Ops, BroadcastSuffix) {
  const Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from_data({2}, {10, 20});
  const Tensor y = add(x, b);
  EXPECT_DOUBLE_EQ(y.at(2), 13.0);
  EXPECT_DOUBLE_EQ(y.at(3), 24.0);
  EXPECT_THROW(add(x, Tensor::zeros({3})), ShapeError);
}

TEST(Ops, Matmul) {
  const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  const Tensor c = matmul(a, b);
  EXPECT_DOUBLE_EQ(c.at(0), 19.0);
  EXPECT_DOUBLE_EQ(c.at(1), 22.0);
  EXPECT_DOUBLE_EQ(c.at(2), 43.0);
  EXPECT_DOUBLE_EQ(c.at(3), 50.0);
  EXPECT_THROW(matmul(a, Tensor::zeros({3, 2})), ShapeError);
}

TEST(Ops, LayerNormNormalisesChannels) {
  Rng rng = make_rng(4);
  const Tensor x = normal_tensor({5, 3, 2}, 3.0, rng);
  const Tensor y = layer_norm(x, Tensor::full({5}, 1.0), Tensor::zeros({5}));
  for (std::size_t p = 0; p < 6; ++p) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 5; ++c) m += y.at(c * 6 + p) / 5;
    for (std::size_t c = 0; c < 5; ++c) v += (y.at(c * 6 + p) - m) * (y.at(c * 6 + p) - m) / 5;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
}

TEST(Ops, PermutationsAndErrors) {
  const Tensor x = Tensor::from_data({3}, {10, 20, 30});
  const std::vector<std::size_t> idx{2, 0, 1};
  const Tensor y = gather_permute(x, idx, {3});
  EXPECT_DOUBLE_EQ(y.at(0), 30.0);
  const std::vector<std::size_t> bad{0, 0, 1};
  EXPECT_THROW(gather_permute(x, bad, {3}), PermutationError);
  EXPECT_FALSE(is_permutation(bad));
  const auto inv = inverse_permutation(idx);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(inv[idx[i]], i);
  const Tensor g = gather(x, bad, {3});
  EXPECT_DOUBLE_EQ(g.at(1), 10.0);
}

TEST(Ops, ConcatSliceReshape) {
  const Tensor a = Tensor::from_data({1, 2}, {1, 2});
  const Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  const std::vector<Tensor> parts{a, b};
  const Tensor c = concat(parts);
  EXPECT_EQ(c.shape(), (Shape{3, 2}));
  const Tensor s = slice(c, 1, 2);
  EXPECT_DOUBLE_EQ(s.at(1), 4.0);
  EXPECT_THROW(reshape(c, {4}), ShapeError);
  EXPECT_EQ(reshape(c, {2, 3}).shape(), (Shape{2, 3}));
}

TEST(Ops, UpsampleAndBilinear) {
  const Tensor x = Tensor::from_data({1, 1, 2}, {1, 3});
  const Tensor u = upsample_nearest(x, 2);
  EXPECT_EQ(u.shape(), (Shape{1, 2, 4}));
  EXPECT_DOUBLE_EQ(u.at(5), 1.0);
  EXPECT_DOUBLE_EQ(u.at(6), 3.0);
  // anchors at columns 0 and 2; column 1 halfway, column 3 clamps
  const Tensor r = bilinear_restore(x, 2, 1, 4);
  EXPECT_DOUBLE_EQ(r.at(0), 1.0);
  EXPECT_DOUBLE_EQ(r.at(1), 2.0);
  EXPECT_DOUBLE_EQ(r.at(2), 3.0);
  EXPECT_DOUBLE_EQ(r.at(3), 3.0);
}

TEST(Autodiff, FanOutAccumulates) {
  const Tensor x = Tensor::from_data({2}, {1.5, -2.0}, true);
  const Tensor loss = sum(add(mul(x, x), x));
  const auto g = backward(loss).of(x);
  EXPECT_DOUBLE_EQ(g[0], 2 * 1.5 + 1);
  EXPECT_DOUBLE_EQ(g[1], 2 * -2.0 + 1);
}

TEST(Autodiff, NonScalarLossRejected) {
  const Tensor x = Tensor::from_data({2}, {1, 2}, true);
  EXPECT_THROW(backward(mul(x, x)), ShapeError);
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  const Tensor x = Tensor::from_data({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(mul(x, x).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Autodiff, UnaryGradients) {
  EXPECT_LT(check_unary([](const Tensor& x) { return exp(x); }, {3, 2}), 1e-5);
  EXPECT_LT(check_unary([](const Tensor& x) { return softplus(x); }, {3, 2}), 1e-5);
  EXPECT_LT(check_unary([](const Tensor& x) { return sigmoid(x); }, {3, 2}), 1e-5);
  EXPECT_LT(check_unary([](const Tensor& x) { return silu(x); }, {3, 2}), 1e-5);
  EXPECT_LT(check_unary([](const Tensor& x) { return neg(x); }, {3, 2}), 1e-5);
  EXPECT_LT(check_unary([](const Tensor& x) { return affine(x, -0.7, 2.0); }, {3, 2}), 1e-5);
}

TEST(Autodiff, BinaryGradients) {
  Rng rng = make_rng(5);
  const Tensor b = normal_tensor({4, 3}, 1.0, rng);
  EXPECT_LT(check_unary([&](const Tensor& x) { return mul(x, b); }, {4, 3}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return sub(b, x); }, {4, 3}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return add(b, x); }, {3}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return mul(b, x); }, {3}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return matmul(x, b); }, {2, 4}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return matmul(b, x); }, {3, 2}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return matmul(b, x); }, {3}), 1e-5);
}

TEST(Autodiff, StructuralGradients) {
  Rng rng = make_rng(6);
  const Tensor w = normal_tensor({4, 3}, 1.0, rng);
  const Tensor bias = normal_tensor({4}, 1.0, rng);
  const Tensor gamma = normal_tensor({3}, 1.0, rng);
  const Tensor beta = normal_tensor({3}, 1.0, rng);
  std::vector<std::size_t> perm{5, 3, 0, 1, 4, 2};
  std::vector<std::size_t> rep{0, 0, 5, 2};
  EXPECT_LT(check_unary([&](const Tensor& x) { return channel_linear(x, w, bias); }, {3, 2, 2}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return layer_norm(x, gamma, beta); }, {3, 2, 2}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return gather_permute(x, perm, {2, 3}); }, {6}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return gather(x, rep, {4}); }, {6}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return slice(x, 1, 3); }, {4, 2}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return reshape(x, {2, 4}); }, {4, 2}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return upsample_nearest(x, 2); }, {2, 2, 3}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return bilinear_restore(x, 2, 4, 5); }, {2, 2, 3}), 1e-5);
  EXPECT_LT(check_unary([&](const Tensor& x) { return mean(x); }, {4, 2}), 1e-5);
  EXPECT_LT(check_unary(
                [&](const Tensor& x) {
                  const std::vector<Tensor> parts{x, mul(x, x)};
                  return concat(parts);
                },
                {2, 3}),
            1e-5);
}

TEST(Autodiff, GradCheckFlagsWrongGradient) {
  // a deliberately wrong backward: claims d/dx = 0
  const auto wrong = [](const Tensor& x) {
    std::vector<double> v(x.data().begin(), x.data().end());
    for (auto& e : v) e = e * e;
    return sum(detail::make_result(
        x.shape(), v, {&x}, [](std::span<const double>, std::span<std::vector<double>* const>) {}, "wrong"));
  };
  EXPECT_GT(grad_check(wrong, Tensor::from_data({2}, {1.0, 2.0})), 0.5);
}
