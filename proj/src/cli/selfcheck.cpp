#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>

#include "flowsteg/checkpoint.hpp"
#include "flowsteg/cli.hpp"
#include "flowsteg/evaluation.hpp"
#include "flowsteg/grad_check.hpp"
#include "flowsteg/perceptual.hpp"
#include "flowsteg/random.hpp"
#include "flowsteg/stego.hpp"
#include "flowsteg/transfer.hpp"

namespace flowsteg {

namespace {

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

CheckResult bound(const std::string& name, double value, double limit) {
  return {name, value <= limit, "value " + sci(value) + " limit " + sci(limit)};
}

CheckResult exact(const std::string& name, bool ok) { return {name, ok, ok ? "bit-exact" : "mismatch"}; }

FlowConfig small_flow() {
  FlowConfig cfg;
  cfg.hidden_width = 8;
  cfg.steps_per_block = 2;
  cfg.image_size = 8;
  return cfg;
}

// Moves each channel mean to the style mean and leaves the spread alone.
Tensor<double> mean_shift_transfer(const Tensor<double>& c, const Tensor<double>& s) {
  const auto mc = channel_stats(c, 0.0).mean;
  const auto ms = channel_stats(s, 0.0).mean;
  Tensor<double> out = c;
  const std::size_t hw = c.plane_size();
  for (std::size_t i = 0; i < c.batch() * c.channels(); ++i) {
    for (std::size_t j = 0; j < hw; ++j) out[i * hw + j] += ms[i] - mc[i];
  }
  return out;
}

}  // namespace

std::vector<CheckResult> run_selfcheck(double scale) {
  std::vector<CheckResult> out;
  auto guarded = [&](const std::string& name, const std::function<CheckResult()>& fn) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("threw: ") + e.what()});
    }
  };

  guarded("flow bijectivity (float)", [&] {
    FlowNetwork<float> flow(FlowConfig{}, 11);
    flow.randomize(12);
    Rng rng(13);
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
      const auto x = rng.uniform_tensor<float>(FlowConfig{}.image_shape(1));
      worst = std::max(worst, max_abs_diff(flow.decode(flow.encode(x)), x));
    }
    return bound("flow bijectivity (float)", worst, 1e-3 * scale);
  });

  guarded("flow bijectivity (double)", [&] {
    FlowNetwork<double> flow(FlowConfig{}, 11);
    flow.randomize(12);
    Rng rng(14);
    const auto x = rng.uniform_tensor<double>(FlowConfig{}.image_shape(1));
    return bound("flow bijectivity (double)", max_abs_diff(flow.decode(flow.encode(x)), x), 1e-9 * scale);
  });

  guarded("latent cycle structural zero", [&] {
    FlowNetwork<float> flow(FlowConfig{}, 21);
    flow.randomize(22);
    Rng rng(23);
    const Var<float> t(rng.normal_tensor<float>(FlowConfig{}.latent_shape(1)));
    return bound("latent cycle structural zero", scalar(content_loss(t, flow.inverse(t), flow)), 1e-3 * scale);
  });

  for (const auto mode : {TransferMode::MeanStd, TransferMode::StdOnly}) {
    const std::string name = "unbiasedness (" + to_string(mode) + ")";
    guarded(name, [&] {
      Rng rng(31);
      const auto fc = rng.normal_tensor<double>({2, 8, 6, 6}, 2.0, 0.5);
      const auto fs = rng.normal_tensor<double>({2, 8, 5, 7}, 0.7, -1.0);
      const auto rep = verify_unbiased(fc, fs, mode, 1e-3 * scale);
      const double worst = std::max({rep.style_residual, rep.content_residual, rep.sigma_residual});
      return CheckResult{name, rep.passed, "worst residual " + sci(worst)};
    });
  }

  guarded("unbiasedness negative control", [&] {
    Rng rng(41);
    const auto fc = rng.normal_tensor<double>({1, 8, 6, 6}, 1.5, 0.2);
    const auto fs = rng.normal_tensor<double>({1, 8, 6, 6}, 0.5, 1.0);
    const auto rep = verify_unbiased<double>(fc, fs, TransferMode::StdOnly, 1e-3 * scale, mean_shift_transfer);
    return CheckResult{"unbiasedness negative control", !rep.passed,
                       "mean-shift content residual " + sci(rep.content_residual)};
  });

  guarded("adain self-identity", [&] {
    Rng rng(51);
    const Var<float> f(rng.normal_tensor<float>({1, 8, 8, 8}, 1.3, 0.4));
    return bound("adain self-identity", max_abs_diff(adain(f, f, TransferMode::MeanStd).value(), f.value()),
                 1e-4 * scale);
  });

  const double h = 1e-6;
  const double gtol = 1e-6 * scale;
  guarded("grad check: flow step", [&] {
    FlowNetwork<double> flow(small_flow(), 61);
    flow.randomize(62, 0.5);
    FlowNetwork<double> probe = flow.cast<double>();
    Rng rng(63);
    const Var<double> x(rng.normal_tensor<double>(small_flow().image_shape(1)));
    const auto w = rng.normal_tensor<double>(small_flow().latent_shape(1));
    auto loss = [&](const FlowNetwork<double>& f) {
      return [&f, &x, &w] { return sum_squares(sub(f.forward(x), Var<double>(w))); };
    };
    const auto rep = grad_check_leaves<double>(loss(flow), param_vars(flow.parameters()), loss(probe),
                                               param_vars(probe.parameters()), h, 64);
    return bound("grad check: flow step", rep.max_rel_error, gtol);
  });

  guarded("grad check: stego nets", [&] {
    FlowConfig fc = small_flow();
    StegoConfig sc{4, 4};
    StegoEncoder<double> enc(sc, 71);
    StegoDecoder<double> dec(sc, 72);
    Rng rng(73);
    for (auto& p : enc.parameters()) p.var.mutable_value() = rng.normal_tensor<double>(p.var.shape(), 0.3);
    StegoEncoder<double> enc2 = enc.cast<double>();
    StegoDecoder<double> dec2 = dec.cast<double>();
    const Var<double> cover(rng.uniform_tensor<double>(fc.image_shape(1)));
    const Var<double> z(rng.normal_tensor<double>(fc.latent_shape(1)));
    auto loss = [&](const StegoEncoder<double>& e, const StegoDecoder<double>& d) {
      return [&] {
        const auto ie = e.embed(cover, z, fc);
        return stego_loss(image_loss(ie, cover), message_loss(d.extract(ie, fc), z), StegoLossWeights{});
      };
    };
    auto leaves = param_vars(enc.parameters());
    for (auto& v : param_vars(dec.parameters())) leaves.push_back(v);
    auto leaves2 = param_vars(enc2.parameters());
    for (auto& v : param_vars(dec2.parameters())) leaves2.push_back(v);
    const auto rep = grad_check_leaves<double>(loss(enc, dec), leaves, loss(enc2, dec2), leaves2, h, 32);
    return bound("grad check: stego nets", rep.max_rel_error, gtol);
  });

  guarded("grad check: perceptual losses", [&] {
    const FeatureExtractor<double> fe;
    Rng rng(81);
    const auto a = rng.uniform_tensor<double>({1, 3, 8, 8});
    const auto b = rng.uniform_tensor<double>({1, 3, 8, 8});
    const auto rep = grad_check<double>(
        [&](auto& in) {
          using U = typename std::decay_t<decltype(in[0])>::value_type;
          const auto f = fe.template cast<U>();
          const Var<U> target(b.template cast<U>());
          return add(style_loss(in[0], target, f), perceptual_content_loss(in[0], target, f));
        },
        {a}, h);
    return bound("grad check: perceptual losses", rep.max_rel_error, gtol);
  });

  guarded("squeeze and payload layout roundtrip", [&] {
    const FlowConfig cfg;
    Rng rng(91);
    const auto z = rng.normal_tensor<float>(cfg.latent_shape(2));
    const auto back = grid_to_payload(payload_to_grid(Var<float>(z), cfg), cfg).value();
    const auto x = rng.normal_tensor<float>({2, 3, 8, 8});
    return exact("squeeze and payload layout roundtrip", bit_equal(back, z) && bit_equal(unsqueeze(squeeze(x, 2), 2), x));
  });

  guarded("checkpoint roundtrip", [&] {
    TrainConfig cfg;
    cfg.flow = small_flow();
    cfg.stego = {4, 4};
    Model<float> model(cfg);
    model.flow.randomize(101);
    model.add_stego();
    const auto ckpt = to_checkpoint(model);
    const auto dir = std::filesystem::temp_directory_path() / "flowsteg_selfcheck";
    std::filesystem::create_directories(dir);
    save_checkpoint(ckpt, dir / "model.ckpt");
    const auto loaded = load_checkpoint(dir / "model.ckpt");
    std::filesystem::remove_all(dir);
    bool ok = loaded.tensors.size() == ckpt.tensors.size() && loaded.config.serialize() == cfg.serialize();
    for (const auto& [name, t] : ckpt.tensors) ok = ok && loaded.tensors.count(name) && bit_equal(loaded.tensors.at(name), t);
    return exact("checkpoint roundtrip", ok);
  });

  guarded("ssim identity", [&] {
    Rng rng(111);
    const auto a = rng.uniform_tensor<float>({1, 3, 16, 16});
    return bound("ssim identity", std::abs(ssim_metric(a, a) - 1.0), 0.0);
  });

  return out;
}

}  // namespace flowsteg
