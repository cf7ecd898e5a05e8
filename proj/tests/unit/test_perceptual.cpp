#include <doctest.h>

#include <cmath>

#include "flowsteg/grad_check.hpp"
#include "flowsteg/perceptual.hpp"
#include "flowsteg/random.hpp"
#include "oracles.hpp"

using namespace flowsteg;

TEST_CASE("extractor tap shapes and determinism") {
  const FeatureExtractor<float> a, b;
  CHECK(a.seed() == 0xC0FFEE);
  const Tensor<float> zero({1, 3, 64, 64});
  const auto ta = a.extract(Var<float>(zero)), tb = b.extract(Var<float>(zero));
  REQUIRE(ta.size() == 4);
  const std::size_t widths[] = {16, 32, 64, 64}, extents[] = {64, 32, 16, 8};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ta[i].shape() == Shape{1, widths[i], extents[i], extents[i]});
    CHECK(bit_equal(ta[i].value(), tb[i].value()));
  }
  // Zero input: first tap is relu(bias), constant per channel.
  const auto& t0 = ta[0].value();
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t i = 1; i < t0.plane_size(); ++i) CHECK(t0.plane(0, c)[i] == t0.plane(0, c)[0]);

  Rng rng(1);
  const auto img = rng.uniform_tensor<float>({2, 3, 64, 64});
  const auto x1 = a.extract(Var<float>(img)), x2 = a.extract(Var<float>(img));
  for (std::size_t i = 0; i < 4; ++i) CHECK(bit_equal(x1[i].value(), x2[i].value()));
  CHECK_THROWS_AS(a.extract(Var<float>(Tensor<float>({1, 3, 20, 20}))), ShapeError);
  CHECK_FALSE(FeatureExtractor<float>(7).extract(Var<float>(img))[0].requires_grad());
}

TEST_CASE("flow-form content loss") {
  FlowConfig cfg;
  FlowNetwork<float> net(cfg, 2);
  net.randomize(3);
  Rng rng(4);
  const auto t = rng.normal_tensor<float>(cfg.latent_shape(1));
  const auto img = net.decode(t);
  CHECK(scalar(content_loss(Var<float>(t), Var<float>(img), net)) <= 1e-3);

  Tensor<float> noisy = img;
  for (auto& v : noisy.values()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
  const double loss = scalar(content_loss(Var<float>(t), Var<float>(noisy), net));
  CHECK(loss > 0.0);
  const double ref = l2_distance(net.encode(noisy), t);
  CHECK(std::abs(loss - ref) <= 1e-6 * ref);
}

TEST_CASE("perceptual content loss") {
  const FeatureExtractor<double> fe;
  Rng rng(5);
  const auto a = rng.uniform_tensor<double>({1, 3, 32, 32});
  const auto b = rng.uniform_tensor<double>({1, 3, 32, 32});
  CHECK(scalar(perceptual_content_loss(Var<double>(a), Var<double>(a), fe)) == 0.0);
  const double ab = scalar(perceptual_content_loss(Var<double>(a), Var<double>(b), fe));
  CHECK(ab == scalar(perceptual_content_loss(Var<double>(b), Var<double>(a), fe)));
  const double ref = l2_distance(fe.extract(Var<double>(a))[3].value(), fe.extract(Var<double>(b))[3].value());
  CHECK(std::abs(ab - ref) <= 1e-12 * ref);
  CHECK_THROWS_AS(perceptual_content_loss(Var<double>(a), Var<double>(rng.uniform_tensor<double>({1, 3, 16, 16})), fe),
                  ShapeError);
}

TEST_CASE("style loss against per-tap statistics") {
  const FeatureExtractor<double> fe;
  Rng rng(6);
  const auto a = rng.uniform_tensor<double>({2, 3, 32, 32});
  const auto b = rng.uniform_tensor<double>({2, 3, 32, 32}, 0.2, 0.6);
  CHECK(scalar(style_loss(Var<double>(a), Var<double>(a), fe)) == 0.0);
  const double loss = scalar(style_loss(Var<double>(a), Var<double>(b), fe));
  CHECK(loss >= 0.0);

  const auto ta = fe.extract(Var<double>(a)), tb = fe.extract(Var<double>(b));
  double ref = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> ma, va, mb, vb;
    oracle::welford(ta[i].value(), ma, va);
    oracle::welford(tb[i].value(), mb, vb);
    double dm = 0.0, ds = 0.0;
    for (std::size_t j = 0; j < ma.size(); ++j) {
      dm += (ma[j] - mb[j]) * (ma[j] - mb[j]);
      const double d = std::sqrt(va[j] + kVarianceFloor) - std::sqrt(vb[j] + kVarianceFloor);
      ds += d * d;
    }
    ref += std::sqrt(dm) + std::sqrt(ds);
  }
  CHECK(std::abs(loss - ref) <= 1e-6 * ref);

  // Style images may differ in size from the stylized image.
  const auto big = rng.uniform_tensor<double>({2, 3, 64, 64});
  CHECK(scalar(style_loss(Var<double>(a), Var<double>(big), fe)) > 0.0);
}

TEST_CASE("perceptual losses pass gradient checks") {
  const FeatureExtractor<double> fd;
  const FeatureExtractor<float> ff;
  Rng rng(7);
  const auto x = rng.uniform_tensor<double>({1, 3, 16, 16});
  const auto y = rng.uniform_tensor<double>({1, 3, 16, 16});
  auto fe_for = [&](auto tag) -> const auto& {
    if constexpr (std::is_same_v<decltype(tag), float>) return ff;
    else return fd;
  };
  auto style = [&](auto& in) {
    using U = typename std::decay_t<decltype(in[0])>::value_type;
    return style_loss(in[0], Var<U>(y.cast<U>()), fe_for(U{}));
  };
  auto content = [&](auto& in) {
    using U = typename std::decay_t<decltype(in[0])>::value_type;
    return perceptual_content_loss(in[0], Var<U>(y.cast<U>()), fe_for(U{}));
  };
  CHECK(grad_check<float>(style, {x}, 1e-5).max_rel_error <= 1e-3);
  CHECK(grad_check<double>(style, {x}, 1e-6).max_rel_error <= 1e-6);
  CHECK(grad_check<float>(content, {x}, 1e-5).max_rel_error <= 1e-3);
  CHECK(grad_check<double>(content, {x}, 1e-6).max_rel_error <= 1e-6);

  FlowConfig cfg;
  cfg.image_size = 8;
  cfg.hidden_width = 8;
  cfg.steps_per_block = 2;
  FlowNetwork<double> nd(cfg, 8);
  nd.randomize(9, 0.5);
  const auto nf = nd.cast<float>();
  const auto t = rng.normal_tensor<double>(cfg.latent_shape(1));
  auto cycle = [&](auto& in) {
    using U = typename std::decay_t<decltype(in[0])>::value_type;
    if constexpr (std::is_same_v<U, float>) return content_loss(Var<U>(t.cast<U>()), in[0], nf);
    else return content_loss(Var<U>(t), in[0], nd);
  };
  const auto img = rng.uniform_tensor<double>({1, 3, 8, 8});
  CHECK(grad_check<float>(cycle, {img}, 1e-5).max_rel_error <= 1e-3);
  CHECK(grad_check<double>(cycle, {img}, 1e-6).max_rel_error <= 1e-6);
}
