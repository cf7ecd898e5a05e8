#include <doctest.h>

#include <cmath>

#include "flowsteg/autograd.hpp"
#include "flowsteg/grad_check.hpp"
#include "flowsteg/kernels.hpp"
#include "flowsteg/linalg.hpp"
#include "flowsteg/random.hpp"
#include "oracles.hpp"

using namespace flowsteg;

TEST_CASE("tensor construction validates length and finiteness") {
  CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor<float>::checked({2}, {1.0f, std::nanf("")}), Error);
  CHECK_THROWS_AS(Tensor<double>::checked({1}, {INFINITY}), Error);
  const auto t = Tensor<float>::checked({1, 1, 1, 2}, {1.0f, 2.0f});
  CHECK(t.numel() == 2);
  CHECK(t.at(0, 0, 0, 1) == 2.0f);
}

TEST_CASE("stack_batch and batch_item are inverse") {
  Rng rng(1);
  const auto a = rng.normal_tensor<float>({1, 2, 3, 3});
  const auto b = rng.normal_tensor<float>({1, 2, 3, 3});
  const std::vector<Tensor<float>> items{a, b};
  const auto s = stack_batch<float>(items);
  CHECK(s.shape() == Shape{2, 2, 3, 3});
  CHECK(bit_equal(batch_item(s, 0), a));
  CHECK(bit_equal(batch_item(s, 1), b));
  const std::vector<Tensor<float>> bad{a, rng.normal_tensor<float>({1, 3, 3, 3})};
  CHECK_THROWS_AS(stack_batch<float>(bad), ShapeError);
}

TEST_CASE("conv2d: 1x1 identity kernel returns the input") {
  Rng rng(2);
  const auto x = rng.normal_tensor<float>({2, 3, 5, 4});
  Tensor<float> k({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) k.at(c, c, 0, 0) = 1.0f;
  CHECK(bit_equal(conv2d_forward(x, k, Tensor<float>({3}), {}), x));
}

TEST_CASE("conv2d: zero kernel with bias gives a constant map") {
  Rng rng(3);
  const auto x = rng.normal_tensor<float>({1, 2, 6, 6});
  const Tensor<float> k({4, 2, 3, 3});
  const Tensor<float> b({4}, std::vector<float>{0.5f, -1.0f, 2.0f, 0.0f});
  const auto y = conv2d_forward(x, k, b, {1, 1});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 36; ++i) CHECK(y.plane(0, c)[i] == b[c]);
}

TEST_CASE("conv2d equals the six-loop oracle bit for bit") {
  struct Case {
    Shape in;
    std::size_t cout, k, stride, pad;
  };
  const Case cases[] = {{{1, 2, 5, 5}, 3, 3, 1, 0}, {{2, 3, 7, 6}, 4, 3, 1, 1}, {{1, 5, 9, 9}, 2, 3, 2, 1},
                        {{2, 6, 8, 8}, 7, 1, 1, 0}, {{1, 4, 6, 10}, 3, 5, 2, 2}, {{3, 33, 5, 5}, 70, 3, 1, 1}};
  Rng rng(4);
  for (const auto& c : cases) {
    CAPTURE(shape_str(c.in));
    const auto xd = rng.normal_tensor<double>(c.in);
    const auto kd = rng.normal_tensor<double>({c.cout, c.in[1], c.k, c.k});
    const auto bd = rng.normal_tensor<double>({c.cout});
    const Conv2dSpec spec{c.stride, c.pad};
    CHECK(bit_equal(conv2d_forward(xd, kd, bd, spec), oracle::conv2d(xd, kd, bd, c.stride, c.pad)));
    const auto xf = xd.cast<float>(), kf = kd.cast<float>(), bf = bd.cast<float>();
    CHECK(bit_equal(conv2d_forward(xf, kf, bf, spec), oracle::conv2d(xf, kf, bf, c.stride, c.pad)));
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  const Tensor<float> x({1, 2, 4, 4});
  CHECK_THROWS_AS(conv2d_forward(x, Tensor<float>({3, 3, 3, 3}), Tensor<float>({3}), {}), ShapeError);
  CHECK_THROWS_AS(conv2d_forward(x, Tensor<float>({3, 2, 3, 3}), Tensor<float>({2}), {}), ShapeError);
  CHECK_THROWS_AS(conv2d_forward(x, Tensor<float>({3, 2, 7, 7}), Tensor<float>({3}), {}), ShapeError);
  CHECK_THROWS_AS(conv2d_forward(x, Tensor<float>({3, 2, 3, 3}), Tensor<float>({3}), {0, 0}), ShapeError);
}

TEST_CASE("conv2d backward matches loop oracles") {
  Rng rng(5);
  const Shape in{2, 3, 7, 6};
  const Conv2dSpec spec{2, 1};
  const auto x = rng.normal_tensor<double>(in);
  const auto k = rng.normal_tensor<double>({4, 3, 3, 3});
  const auto y = conv2d_forward(x, k, Tensor<double>({4}), spec);
  const auto g = rng.normal_tensor<double>(y.shape());

  Tensor<double> gx(in), gk(k.shape()), gb({4});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t oy = 0; oy < y.dim(2); ++oy)
        for (std::size_t ox = 0; ox < y.dim(3); ++ox) {
          const double go = g.at(n, o, oy, ox);
          gb[o] += go;
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t dy = 0; dy < 3; ++dy)
              for (std::size_t dx = 0; dx < 3; ++dx) {
                const long iy = static_cast<long>(oy * 2 + dy) - 1, ix = static_cast<long>(ox * 2 + dx) - 1;
                if (iy < 0 || ix < 0 || iy >= 7 || ix >= 6) continue;
                gx.at(n, c, iy, ix) += k.at(o, c, dy, dx) * go;
                gk.at(o, c, dy, dx) += x.at(n, c, iy, ix) * go;
              }
        }
  CHECK(max_abs_diff(conv2d_backward_input(g, k, in, spec), gx) < 1e-12);
  Tensor<double> ak(k.shape()), ab({4});
  conv2d_backward_params(g, x, spec, ak, ab);
  CHECK(max_abs_diff(ak, gk) < 1e-12);
  CHECK(max_abs_diff(ab, gb) < 1e-12);
}

TEST_CASE("channel_stats closed forms") {
  const Tensor<double> t({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto s = channel_stats(t, 0.0);
  CHECK(s.mean[0] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(s.std[0] == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));

  const Tensor<float> c({1, 1, 4, 4}, 3.25f);
  const auto sc = channel_stats(c, 1e-5);
  CHECK(sc.mean[0] == 3.25f);
  CHECK(sc.std[0] == doctest::Approx(std::sqrt(1e-5)).epsilon(1e-6));
}

TEST_CASE("channel_stats matches a streaming oracle") {
  Rng rng(6);
  const auto t = rng.normal_tensor<float>({2, 4, 8, 8}, 3.0, 1.5);
  const auto s = channel_stats(t, 0.0);
  std::vector<double> mean, var;
  oracle::welford(t, mean, var);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    CHECK(std::abs(s.mean[i] - mean[i]) <= 1e-6 * std::abs(mean[i]) + 1e-7);
    CHECK(std::abs(s.std[i] - std::sqrt(var[i])) <= 1e-6 * std::sqrt(var[i]));
  }
}

TEST_CASE("channel_stats is affine equivariant") {
  Rng rng(7);
  const auto t = rng.normal_tensor<double>({2, 3, 5, 5});
  for (const double a : {-2.0, 0.5, 3.0}) {
    Tensor<double> u = t;
    for (auto& v : u.values()) v = a * v + 0.75;
    const auto s = channel_stats(t, 0.0), su = channel_stats(u, 0.0);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(su.mean[i] == doctest::Approx(a * s.mean[i] + 0.75).epsilon(1e-6));
      CHECK(su.std[i] == doctest::Approx(std::abs(a) * s.std[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("squeeze orders sub-pixels as c*f^2 + dy*f + dx") {
  const Tensor<float> x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const auto y = squeeze(x, 2);
  CHECK(y.shape() == Shape{1, 4, 1, 1});
  CHECK(y.storage() == std::vector<float>{1, 2, 3, 4});

  const Tensor<float> x2({1, 2, 2, 2}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(squeeze(x2, 2).storage() == std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("squeeze roundtrip is exact and conserves elements") {
  Rng rng(8);
  const auto x = rng.normal_tensor<float>({1, 3, 64, 64});
  const auto y = squeeze(x, 2);
  CHECK(y.shape() == Shape{1, 12, 32, 32});
  CHECK(y.numel() == 12288);
  CHECK(bit_equal(unsqueeze(y, 2), x));
  const auto r = rng.normal_tensor<double>({2, 5, 6, 9});
  CHECK(bit_equal(unsqueeze(squeeze(r, 3), 3), r));
  CHECK_THROWS_AS(squeeze(Tensor<float>({1, 1, 3, 4}), 2), ShapeError);
  CHECK_THROWS_AS(unsqueeze(Tensor<float>({1, 3, 2, 2}), 2), ShapeError);
}

TEST_CASE("grad_check: sum of squares at ones") {
  const auto rep = grad_check<double>([](auto& in) { return sum_squares(in[0]); },
                                      {Tensor<double>({1, 1, 2, 3}, 1.0)}, 1e-6);
  CHECK(rep.max_rel_error < 1e-9);

  Var<double> x = Var<double>::parameter(Tensor<double>({1, 1, 2, 3}, 1.0));
  backward(sum_squares(x));
  const Tensor<double> g = x.grad();
  for (double v : g.values()) CHECK(v == 2.0);
}

TEST_CASE("grad_check: linear map agrees exactly") {
  Rng rng(9);
  const auto k = rng.normal_tensor<double>({2, 3, 1, 1});
  const auto w = rng.normal_tensor<double>({1, 2, 4, 4});
  const auto rep = grad_check<double>(
      [&](auto& in) {
        using U = typename std::decay_t<decltype(in[0])>::value_type;
        const Var<U> kk(k.cast<U>()), bb(Tensor<U>({2})), ww(w.cast<U>());
        const auto y = conv2d(in[0], kk, bb, {});
        Var<U> prod = channel_apply(y, Var<U>(Tensor<U>({1, 2, 1, 1}, U(1))), ChannelOp::Mul);
        // <w, y> written as ((y + w)^2 - (y - w)^2) / 4 stays linear in y.
        return scale(sub(sum_squares(add(prod, ww)), sum_squares(sub(prod, ww))), U(0.25));
      },
      {rng.normal_tensor<double>({1, 3, 4, 4})}, 1e-3);
  CHECK(rep.max_rel_error < 1e-9);
}

TEST_CASE("grad_check reports non-finite gradients") {
  CHECK_THROWS_AS(grad_check<double>([](auto& in) { return sum_squares(in[0]); }, {Tensor<double>({1}, 1.0)}, 0.0),
                  GradientError);
}

namespace {

// Runs `fn` through grad_check in float (1e-3) and double (1e-6).
template <typename Fn>
void check_both(const char* name, Fn&& fn, const std::vector<Tensor<double>>& inputs) {
  CAPTURE(name);
  const auto f = grad_check<float>(fn, inputs, 1e-5);
  CHECK(f.max_rel_error <= 1e-3);
  const auto d = grad_check<double>(fn, inputs, 1e-6);
  CHECK(d.max_rel_error <= 1e-6);
}

}  // namespace

TEST_CASE("every differentiable op passes central differences") {
  Rng rng(10);
  const auto x = rng.normal_tensor<double>({2, 4, 6, 6});
  const auto y = rng.normal_tensor<double>({2, 4, 6, 6});
  const auto k = rng.normal_tensor<double>({3, 4, 3, 3}, 0.3);
  const auto b = rng.normal_tensor<double>({3});
  const auto s = rng.uniform_tensor<double>({2, 4, 1, 1}, 0.5, 2.0);

  // Fixed offset so the loss is not symmetric in the output.
  auto dot = [](auto v) {
    using U = typename decltype(v)::value_type;
    Tensor<U> w(v.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<U>(std::sin(0.7 * static_cast<double>(i)));
    return sum_squares(sub(v, Var<U>(w)));
  };

  check_both("conv2d", [&](auto& in) {
    return sum_squares(conv2d(in[0], in[1], in[2], {2, 1}));
  }, {x, k, b});
  check_both("leaky_relu", [&](auto& in) {
    using U = typename std::decay_t<decltype(in[0])>::value_type;
    return dot(leaky_relu(in[0], U(0.2)));
  }, {x});
  check_both("add/sub/scale", [&](auto& in) {
    using U = typename std::decay_t<decltype(in[0])>::value_type;
    return dot(scale(sub(add(in[0], in[1]), scale(in[1], U(3))), U(0.5)));
  }, {x, y});
  check_both("concat/slice", [&](auto& in) {
    const auto c = concat_channels(slice_channels(in[0], 1, 2), slice_channels(in[1], 0, 2));
    return dot(c);
  }, {x, y});
  check_both("squeeze/unsqueeze", [&](auto& in) { return dot(unsqueeze(squeeze(in[0], 2), 2)); }, {x});
  check_both("channel_mean", [&](auto& in) { return sum_squares(channel_mean(in[0])); }, {x});
  check_both("channel_std", [&](auto& in) { return sum_squares(channel_std(in[0], 1e-5)); }, {x});
  for (const auto op : {ChannelOp::Add, ChannelOp::Sub, ChannelOp::Mul, ChannelOp::Div}) {
    check_both("channel_apply", [&](auto& in) { return dot(channel_apply(in[0], in[1], op)); }, {x, s});
  }
  check_both("l2_norm", [&](auto& in) { return l2_norm(in[0]); }, {x});
  check_both("max_pool2", [&](auto& in) { return dot(upsample2(max_pool2(in[0]))); }, {x});
  check_both("upsample2", [&](auto& in) { return sum_squares(upsample2(in[0])); }, {x});
}

TEST_CASE("conv2d layer gradient in 64-bit with h=1e-4") {
  Rng rng(11);
  const auto rep = grad_check<double>([](auto& in) { return sum_squares(conv2d(in[0], in[1], in[2], {1, 1})); },
                                      {rng.normal_tensor<double>({1, 3, 6, 6}),
                                       rng.normal_tensor<double>({4, 3, 3, 3}), rng.normal_tensor<double>({4})},
                                      1e-4);
  CHECK(rep.max_rel_error <= 1e-6);
}

TEST_CASE("no-grad guard suppresses taping") {
  Var<float> p = Var<float>::parameter(Tensor<float>({1}, 2.0f));
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(scale(p, 3.0f).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(scale(p, 3.0f).requires_grad());
}

TEST_CASE("LU determinant and solves") {
  const std::vector<double> a{4, 3, 6, 3};
  LuDecomposition lu(std::span<const double>(a), 2);
  CHECK(lu.determinant() == doctest::Approx(-6.0));
  // Columns of planes are right-hand sides: b1 = (10, 12), b2 = (7, 9).
  std::vector<double> planes{10, 7, 12, 9};
  lu.solve_planes(planes, 2);
  CHECK(planes[0] == doctest::Approx(1.0));
  CHECK(planes[2] == doctest::Approx(2.0));
  CHECK(planes[1] == doctest::Approx(1.0));
  CHECK(planes[3] == doctest::Approx(1.0));
  std::vector<double> tp{10, 9};
  lu.solve_planes(tp, 1, true);
  CHECK(4 * tp[0] + 6 * tp[1] == doctest::Approx(10.0));
  CHECK(3 * tp[0] + 3 * tp[1] == doctest::Approx(9.0));

  const std::vector<float> sing{1, 2, 2, 4};
  CHECK(LuDecomposition(std::span<const float>(sing), 2).determinant() == 0.0);
}

TEST_CASE("random orthogonal matrices are orthogonal") {
  Rng rng(12);
  for (std::size_t n : {3u, 12u, 48u}) {
    const auto q = random_orthogonal(n, rng);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += q[i * n + k] * q[j * n + k];
        CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-12);
      }
    CHECK(std::abs(std::abs(LuDecomposition(std::span<const double>(q), n).determinant()) - 1.0) < 1e-10);
  }
}

TEST_CASE("operations are deterministic") {
  Rng a(13), b(13);
  const auto x = a.normal_tensor<float>({1, 3, 16, 16});
  CHECK(bit_equal(x, b.normal_tensor<float>({1, 3, 16, 16})));
  const auto k = a.normal_tensor<float>({8, 3, 3, 3});
  CHECK(bit_equal(conv2d_forward(x, k, Tensor<float>({8}), {1, 1}), conv2d_forward(x, k, Tensor<float>({8}), {1, 1})));
}
