#include <doctest.h>

#include <cmath>

#include "flowsteg/random.hpp"
#include "flowsteg/transfer.hpp"
#include "oracles.hpp"

using namespace flowsteg;

namespace {

Tensor<double> scaled(const Tensor<double>& t, double a, double b = 0.0) {
  Tensor<double> out = t;
  for (auto& v : out.values()) v = a * v + b;
  return out;
}

Tensor<double> adain_t(const Tensor<double>& c, const Tensor<double>& s, TransferMode mode) {
  return adain(Var<double>(c), Var<double>(s), mode).value();
}

// f_c - mu(f_c) + mu(f_s): moves the means only.
Tensor<double> mean_shift(const Tensor<double>& c, const Tensor<double>& s) {
  const auto mc = channel_stats(c, 0.0).mean, ms = channel_stats(s, 0.0).mean;
  Tensor<double> out = c;
  const std::size_t hw = c.plane_size();
  for (std::size_t p = 0; p < mc.numel(); ++p)
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] += ms[p] - mc[p];
  return out;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST_CASE("transfer mode names") {
  CHECK(parse_transfer_mode("std_only") == TransferMode::StdOnly);
  CHECK(parse_transfer_mode("mean_std") == TransferMode::MeanStd);
  CHECK(to_string(TransferMode::StdOnly) == "std_only");
  CHECK_THROWS_AS(parse_transfer_mode("mean"), ConfigError);
}

TEST_CASE("content_factor examples") {
  Rng rng(1);
  // Unit-sigma channels: normalize a random tensor first.
  auto f = rng.normal_tensor<double>({1, 4, 8, 8}, 1.0, 0.5);
  const auto st = channel_stats(f, 0.0);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t i = 0; i < 64; ++i) f[p * 64 + i] /= st.std[p];
  const auto cf = content_factor(Var<double>(f), TransferMode::StdOnly).value();
  CHECK(oracle::max_rel(cf, f) <= 1e-5);

  const auto g = rng.normal_tensor<double>({2, 4, 8, 8});
  CHECK(oracle::max_rel(content_factor(Var<double>(scaled(g, 3.0)), TransferMode::StdOnly).value(),
                        content_factor(Var<double>(g), TransferMode::StdOnly).value()) <= 1e-5);

  const auto h = rng.normal_tensor<double>({2, 6, 8, 8}, 2.0, 1.0);
  const auto s = channel_stats(content_factor(Var<double>(h), TransferMode::MeanStd).value(), 0.0);
  for (std::size_t i = 0; i < s.mean.numel(); ++i) {
    CHECK(std::abs(s.mean[i]) <= 1e-4);
    CHECK(std::abs(s.std[i] - 1.0) <= 1e-4);
  }
}

TEST_CASE("style_factor examples") {
  const Tensor<double> c({1, 2, 4, 4}, 5.0);
  const auto sc = style_factor(c, TransferMode::MeanStd);
  for (std::size_t i = 0; i < 2; ++i) CHECK(sc.std[i] == doctest::Approx(std::sqrt(kVarianceFloor)).epsilon(1e-12));
  const auto so = style_factor(c, TransferMode::StdOnly);
  for (std::size_t i = 0; i < 2; ++i) CHECK(so.mean[i] == 0.0);

  Rng rng(2);
  const auto f = rng.normal_tensor<double>({2, 3, 6, 6});
  const auto s1 = style_factor(f, TransferMode::MeanStd), s2 = style_factor(scaled(f, 2.0), TransferMode::MeanStd);
  std::vector<double> mean, var;
  oracle::welford(f, mean, var);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(rel(s2.std[i], 2.0 * s1.std[i]) <= 1e-5);
    CHECK(std::abs(s1.mean[i] - mean[i]) <= 1e-12);
    CHECK(rel(s1.std[i], std::sqrt(var[i] + kVarianceFloor)) <= 1e-12);
  }
}

TEST_CASE("adain examples") {
  Rng rng(3);
  const auto f = rng.normal_tensor<double>({2, 8, 8, 8}, 1.3, 0.4);
  CHECK(max_abs_diff(adain_t(f, f, TransferMode::MeanStd), f) <= 1e-4);
  CHECK(oracle::max_rel(adain_t(f, scaled(f, 2.0), TransferMode::StdOnly), scaled(f, 2.0)) <= 1e-4);

  const auto c = rng.normal_tensor<double>({2, 8, 8, 8});
  const auto s = rng.normal_tensor<double>({2, 8, 8, 8}, 3.0, -1.0);
  for (const auto mode : {TransferMode::StdOnly, TransferMode::MeanStd}) {
    const auto out = channel_stats(adain_t(c, s, mode), kVarianceFloor);
    const auto ss = channel_stats(s, kVarianceFloor);
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(rel(out.std[i], ss.std[i]) <= 1e-3);
      if (mode == TransferMode::MeanStd) CHECK(std::abs(out.mean[i] - ss.mean[i]) <= 1e-3 * std::abs(ss.mean[i]) + 1e-9);
    }
  }

  // Style statistics come from the style tensor's own grid.
  const auto small = rng.normal_tensor<double>({2, 8, 4, 4}, 2.0);
  CHECK(adain_t(c, small, TransferMode::MeanStd).shape() == c.shape());
  CHECK_THROWS_AS(adain_t(c, rng.normal_tensor<double>({2, 7, 8, 8}), TransferMode::MeanStd), ShapeError);
}

TEST_CASE("adain properties on random pairs") {
  // Latent-scale statistics, as produced behind initialized actnorm layers.
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = rng.normal_tensor<double>({1, 12, 6, 6}, rng.uniform(0.7, 1.5), rng.uniform(-1, 1));
    const auto s = rng.normal_tensor<double>({1, 12, 6, 6}, rng.uniform(0.7, 1.5), rng.uniform(-1, 1));
    for (const auto mode : {TransferMode::StdOnly, TransferMode::MeanStd}) {
      const auto cs = adain_t(c, s, mode);
      // Content factors agree.
      CHECK(oracle::max_rel1(content_factor(Var<double>(cs), mode).value(),
                             content_factor(Var<double>(c), mode).value()) <= 1e-3);
      // Idempotence.
      CHECK(max_abs_diff(adain_t(cs, s, mode), cs) <= 1e-4);
    }
    for (const double a : {0.5, 2.0, 10.0}) {
      const auto ref = adain_t(c, s, TransferMode::StdOnly);
      CHECK(oracle::max_rel1(adain_t(scaled(c, a), s, TransferMode::StdOnly), ref) <= 1e-3);
    }
  }
}

TEST_CASE("verify_unbiased passes on random pairs in both modes") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = rng.normal_tensor<float>({1, 48, 16, 16}, rng.uniform(0.3, 3.0), rng.uniform(-1, 1));
    const auto s = rng.normal_tensor<float>({1, 48, 16, 16}, rng.uniform(0.3, 3.0), rng.uniform(-1, 1));
    for (const auto mode : {TransferMode::StdOnly, TransferMode::MeanStd}) {
      const auto rep = verify_unbiased(c, s, mode, 1e-3);
      CHECK(rep.passed);
      CHECK(rep.degenerate_channels == 0);
      CHECK(rep.style_residual <= 1e-3);
      CHECK(rep.content_residual <= 1e-3);
      CHECK(rep.sigma_residual <= 1e-3);
    }
  }
}

TEST_CASE("verify_unbiased with a constant content channel") {
  Rng rng(6);
  auto c = rng.normal_tensor<double>({1, 4, 8, 8});
  for (std::size_t i = 0; i < 64; ++i) c[64 + i] = 0.25;
  const auto s = rng.normal_tensor<double>({1, 4, 8, 8}, 2.0);
  for (const auto mode : {TransferMode::StdOnly, TransferMode::MeanStd}) {
    const auto rep = verify_unbiased(c, s, mode, 1e-3);
    CHECK(rep.passed);
    CHECK(rep.degenerate_channels == 1);
    CHECK(std::isfinite(rep.content_residual));
  }
}

TEST_CASE("mean-shift negative control fails verification") {
  Rng rng(7);
  const auto c = rng.normal_tensor<double>({1, 8, 8, 8}, 1.0, 2.0);
  const auto s = rng.normal_tensor<double>({1, 8, 8, 8}, 3.0, -1.0);
  const auto so = verify_unbiased<double>(c, s, TransferMode::StdOnly, 1e-3, mean_shift);
  CHECK_FALSE(so.passed);
  CHECK(so.content_residual > 1e-3);
  const auto ms = verify_unbiased<double>(c, s, TransferMode::MeanStd, 1e-3, mean_shift);
  CHECK_FALSE(ms.passed);
  CHECK(ms.style_residual > 1e-3);
}

TEST_CASE("stylize with the content as its own style") {
  FlowConfig cfg;
  FlowNetwork<float> net(cfg, 8);
  net.randomize(9);
  Rng rng(10);
  const auto img = rng.uniform_tensor<float>({1, 3, 64, 64});
  const auto out = stylize(net, Var<float>(img), Var<float>(img), TransferMode::MeanStd);
  CHECK(out.image.shape() == img.shape());
  CHECK(out.latent.shape() == cfg.latent_shape(1));
  CHECK(max_abs_diff(out.image.value(), img) <= 1e-2);
  CHECK(bit_equal(out.content_code.value(), net.encode(img)));

  const auto style = rng.uniform_tensor<float>({1, 3, 64, 64});
  const auto st = stylize(net, Var<float>(img), Var<float>(style), TransferMode::MeanStd);
  CHECK(max_abs_diff(net.encode(st.image.value()), st.latent.value()) <= 1e-3);
}
