#include <doctest.h>

#include <cmath>

#include "flowsteg/grad_check.hpp"
#include "flowsteg/random.hpp"
#include "flowsteg/stego.hpp"

using namespace flowsteg;

namespace {

template <typename T>
void randomize_params(const ParamList<T>& params, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (const auto& p : params) {
    Var<T> v = p.var;
    for (auto& x : v.mutable_value().values()) x = static_cast<T>(rng.normal() * scale);
  }
}

}  // namespace

TEST_CASE("payload layout") {
  const FlowConfig cfg;
  Rng rng(1);
  const auto z = rng.normal_tensor<float>(cfg.latent_shape(2));
  const auto grid = payload_to_grid(Var<float>(z), cfg).value();
  CHECK(grid.shape() == Shape{2, 3, 64, 64});
  CHECK(bit_equal(grid_to_payload(Var<float>(grid), cfg).value(), z));
  CHECK(l2_norm(grid) == l2_norm(z));
  CHECK(bit_equal(grid, unsqueeze(unsqueeze(z, 2), 2)));
  CHECK_THROWS_AS(payload_to_grid(Var<float>(Tensor<float>({1, 12, 16, 16})), cfg), ShapeError);
  CHECK_THROWS_AS(grid_to_payload(Var<float>(Tensor<float>({1, 3, 32, 32})), cfg), ShapeError);
}

TEST_CASE("encoder and decoder structure") {
  const StegoConfig sc;
  const StegoEncoder<float> enc(sc, 2);
  const StegoDecoder<float> dec(sc, 3);
  CHECK(enc.layer_count() == 5);
  CHECK(dec.layer_count() == 8);
  const auto ep = enc.parameters();
  CHECK(ep.front().name == "stego.enc.l0.w");
  CHECK(ep.front().var.shape() == Shape{32, 6, 3, 3});
  CHECK(ep.back().name == "stego.enc.l4.b");
  const auto dp = dec.parameters();
  CHECK(dp.front().var.shape() == Shape{32, 3, 3, 3});
  CHECK(dp[dp.size() - 2].var.shape() == Shape{3, 32, 3, 3});
  CHECK(dp.back().name == "stego.dec.l7.b");
}

TEST_CASE("untrained encoder returns the cover bit-exactly") {
  const FlowConfig cfg;
  const StegoEncoder<float> enc(StegoConfig{}, 4);
  const StegoDecoder<float> dec(StegoConfig{}, 5);
  Rng rng(6);
  const auto cover = rng.uniform_tensor<float>({2, 3, 64, 64});
  const auto z = rng.normal_tensor<float>(cfg.latent_shape(2));
  const auto ie = enc.embed(Var<float>(cover), Var<float>(z), cfg).value();
  CHECK(bit_equal(ie, cover));
  const auto zh = dec.extract(Var<float>(ie), cfg).value();
  CHECK(zh.shape() == cfg.latent_shape(2));
  CHECK(bit_equal(zh, dec.extract(Var<float>(ie), cfg).value()));
  CHECK_THROWS_AS(enc.embed(Var<float>(cover), Var<float>(rng.normal_tensor<float>(cfg.latent_shape(1))), cfg),
                  ShapeError);
}

TEST_CASE("stego losses") {
  Rng rng(7);
  const auto a = rng.uniform_tensor<double>({1, 3, 8, 8});
  const auto b = rng.uniform_tensor<double>({1, 3, 8, 8});
  CHECK(scalar(image_loss(Var<double>(a), Var<double>(a))) == 0.0);
  const double ab = scalar(image_loss(Var<double>(a), Var<double>(b)));
  CHECK(ab == scalar(image_loss(Var<double>(b), Var<double>(a))));
  double sq = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(std::abs(ab - std::sqrt(sq)) <= 1e-12);

  FlowConfig cfg;
  cfg.image_size = 8;
  const auto z1 = rng.normal_tensor<double>(cfg.latent_shape(1));
  const auto z2 = rng.normal_tensor<double>(cfg.latent_shape(1));
  CHECK(scalar(message_loss(Var<double>(z1), Var<double>(z1))) == 0.0);
  const double ml = scalar(message_loss(Var<double>(z1), Var<double>(z2)));
  CHECK(ml >= 0.0);
  const double grid = scalar(message_loss(payload_to_grid(Var<double>(z1), cfg), payload_to_grid(Var<double>(z2), cfg)));
  CHECK(grid == ml);

  const Var<double> li(Tensor<double>({1}, 2.5)), lm(Tensor<double>({1}, 4.0));
  CHECK(scalar(stego_loss(li, lm, {1.0, 0.0})) == 2.5);
  CHECK(scalar(stego_loss(li, lm, {0.0, 1.0})) == 4.0);
  CHECK(scalar(stego_loss(li, lm, {1.0, 1.0})) == 6.5);
  CHECK_THROWS_AS((StegoLossWeights{0.0, 0.0}.validate()), ConfigError);
  CHECK_THROWS_AS((StegoLossWeights{-1.0, 1.0}.validate()), ConfigError);
}

TEST_CASE("stego networks pass gradient checks") {
  FlowConfig cfg;
  cfg.image_size = 8;
  const StegoConfig sc{4, 4};
  StegoEncoder<double> enc(sc, 8);
  StegoDecoder<double> dec(sc, 9);
  randomize_params(enc.parameters(), 10, 0.3);
  randomize_params(dec.parameters(), 11, 0.3);
  const auto encf = enc.cast<float>();
  const auto decf = dec.cast<float>();
  Rng rng(12);
  const auto cover = rng.uniform_tensor<double>({1, 3, 8, 8});
  const auto z = rng.normal_tensor<double>(cfg.latent_shape(1));
  const auto coverf = cover.cast<float>();
  const auto zf = z.cast<float>();

  auto run = [&](const auto& e, const auto& d, const auto& c, const auto& p) {
    using U = typename std::decay_t<decltype(c)>::value_type;
    const Var<U> ie = e.embed(Var<U>(c), Var<U>(p), cfg);
    return stego_loss(image_loss(ie, Var<U>(c)), message_loss(d.extract(ie, cfg), Var<U>(p)), {1.0, 1.0});
  };
  auto leaves_d = param_vars(enc.parameters());
  for (const auto& v : param_vars(dec.parameters())) leaves_d.push_back(v);
  auto leaves_f = param_vars(encf.parameters());
  for (const auto& v : param_vars(decf.parameters())) leaves_f.push_back(v);

  const auto rf = grad_check_leaves<float>([&] { return run(encf, decf, coverf, zf); }, leaves_f,
                                           [&] { return run(enc, dec, cover, z); }, leaves_d, 1e-5);
  CHECK(rf.max_rel_error <= 1e-3);
  const auto rd = grad_check_leaves<double>([&] { return run(enc, dec, cover, z); }, leaves_d,
                                            [&] { return run(enc, dec, cover, z); }, leaves_d, 1e-6);
  CHECK(rd.max_rel_error <= 1e-6);

  // With respect to the cover and payload inputs.
  auto in_fn = [&](auto& in) {
    using U = typename std::decay_t<decltype(in[0])>::value_type;
    const auto& e = [&]() -> const auto& {
      if constexpr (std::is_same_v<U, float>) return encf;
      else return enc;
    }();
    return sum_squares(e.embed(in[0], in[1], cfg));
  };
  CHECK(grad_check<float>(in_fn, {cover, z}, 1e-5).max_rel_error <= 1e-3);
  CHECK(grad_check<double>(in_fn, {cover, z}, 1e-6).max_rel_error <= 1e-6);
}
