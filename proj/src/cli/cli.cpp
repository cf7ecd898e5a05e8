#include "flowsteg/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "flowsteg/checkpoint.hpp"
#include "flowsteg/corpus.hpp"
#include "flowsteg/evaluation.hpp"
#include "flowsteg/image_io.hpp"
#include "flowsteg/train.hpp"

namespace flowsteg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Options {
  // train
  std::string stage;
  std::string config_path;
  std::string content_dir;
  std::string style_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  // shared
  std::string out;
  std::string ckpt;
  // stylize / destylize / serial
  std::string content;
  std::string style;
  std::string image;
  std::string original;
  std::vector<std::string> styles;
  bool embed = false;
  // eval
  std::string experiment;
  std::size_t rounds = 50;
  std::size_t baseline_steps = 300;
  std::size_t n_contents = 8;
  std::size_t n_chain = 3;
  bool oracle_payload = false;
  // selfcheck
  bool inject_fault = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_summary(const fs::path& dir, const ordered_json& summary) {
  write_text(dir / "summary.txt", summary.dump(2) + "\n");
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

void write_snapshot(const fs::path& dir, const std::string& command, const TrainConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& args) {
  std::ostringstream os;
  os << "# command=" << command << '\n';
  for (const auto& [k, v] : args) {
    if (!v.empty()) os << "# " << k << '=' << v << '\n';
  }
  os << cfg.serialize();
  write_text(dir / "config.snapshot", os.str());
}

Model<float> load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("--ckpt is required");
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
  try {
    return from_checkpoint(load_checkpoint(path));
  } catch (const FormatError& e) {
    throw ConfigError(std::string("unusable checkpoint: ") + e.what());
  }
}

Tensor<float> read_input(const std::string& path) {
  if (path.empty()) throw ConfigError("missing image path");
  if (!fs::exists(path)) throw ConfigError("image not found: " + path);
  try {
    return read_png(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
}

/// Scales the shorter side to the model size and centre-crops.
Tensor<float> fit_image(const Tensor<float>& image, std::size_t size) {
  if (image.height() == size && image.width() == size) return image;
  return center_crop(resize_shorter_side(image, size), size);
}

Corpus make_corpus(const Options& o, const TrainConfig& cfg) {
  if (o.content_dir.empty() != o.style_dir.empty()) {
    throw ConfigError("--content-dir and --style-dir must be given together");
  }
  if (!o.content_dir.empty()) return load_corpus(o.content_dir, o.style_dir, cfg.image_size(), cfg.seed);
  return synth_corpus(cfg.seed, cfg.synth_images, cfg.image_size());
}

TrainConfig resolve_config(const Options& o) {
  TrainConfig cfg = o.config_path.empty() ? TrainConfig{} : TrainConfig::load(o.config_path);
  if (!o.stage.empty()) cfg.stage = parse_stage(o.stage);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.steps) cfg.steps = *o.steps;
  cfg.validate();
  return cfg;
}

ordered_json metrics_json(const EvalMetrics& m) {
  return {{"total", m.total},         {"content", m.content}, {"style", m.style},
          {"image", m.image},         {"message", m.message}, {"latent_rel_error", m.latent_rel_error},
          {"cycle", m.cycle}};
}

int cmd_train(const Options& o, std::ostream& out) {
  const TrainConfig cfg = resolve_config(o);
  std::optional<Model<float>> stage1;
  if (cfg.stage != Stage::One) {
    if (o.ckpt.empty()) throw ConfigError("stage " + to_string(cfg.stage) + " requires --ckpt with a stage-1 checkpoint");
    stage1.emplace(load_model(o.ckpt));
  }
  const fs::path dir = prepare_out(o.out);
  write_snapshot(dir, "train", cfg,
                 {{"content_dir", o.content_dir}, {"style_dir", o.style_dir}, {"ckpt", o.ckpt}});
  const Corpus corpus = make_corpus(o, cfg);

  auto log = [&out](const TrainLogRow& r) {
    if (r.step == 1 || r.step % 10 == 0) {
      out << "step " << r.step << " total " << r.total << " cycle " << r.cycle << '\n';
    }
  };
  TrainResult result = cfg.stage == Stage::One ? train_stage1(cfg, corpus, log)
                                               : train_stage2(cfg, corpus, &*stage1, log);
  save_checkpoint(to_checkpoint(result.model), dir / "model.ckpt");
  write_train_csv(dir / "metrics.csv", result.log);
  write_text(dir / "timing.txt", "wall_seconds=" + std::to_string(result.wall_seconds) + "\n");

  ordered_json summary = {{"command", "train"},
                          {"stage", to_string(cfg.stage)},
                          {"steps", cfg.steps},
                          {"initial", metrics_json(result.initial)},
                          {"first_update", metrics_json(result.first_update)},
                          {"final", metrics_json(result.final)},
                          {"max_cycle", result.max_cycle},
                          {"cycle_within_tolerance", result.max_cycle <= kCycleTolerance},
                          {"window_violation", result.window_violation ? ordered_json(*result.window_violation)
                                                                       : ordered_json(nullptr)}};
  write_summary(dir, summary);
  out << "wrote " << (dir / "model.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_stylize(const Options& o, std::ostream& out) {
  const Model<float> model = load_model(o.ckpt);
  const fs::path dir = prepare_out(o.out);
  write_snapshot(dir, "stylize", model.config,
                 {{"content", o.content}, {"style", o.style}, {"ckpt", o.ckpt}, {"embed", o.embed ? "1" : "0"}});
  const std::size_t size = model.config.image_size();
  const Tensor<float> content = fit_image(read_input(o.content), size);
  const Tensor<float> style = fit_image(read_input(o.style), size);

  NoGradGuard guard;
  const auto s = stylize(model.flow, Var<float>(content), Var<float>(style), model.config.mode);
  write_png(dir / "stylized.png", s.image.value());
  ordered_json summary = {{"command", "stylize"}, {"embedded", o.embed}};
  if (o.embed) {
    std::optional<Model<float>> untrained;
    const Model<float>* source = &model;
    if (!model.has_stego()) {
      out << "checkpoint has no stego networks; embedding with an untrained encoder\n";
      untrained.emplace(model.config);
      untrained->add_stego();
      source = &*untrained;
    }
    const Tensor<float> ie = source->encoder->embed(s.image, s.content_code, model.config.flow).value();
    write_png(dir / "stego.png", ie);
    summary["trained_encoder"] = model.encoder.has_value();
    summary["stego_vs_stylized_linf"] = max_abs_diff(ie, s.image.value());
  }
  summary["ssim_stylized_vs_content"] = ssim_metric(s.image.value(), content);
  write_summary(dir, summary);
  out << "wrote " << (dir / "stylized.png").string() << '\n';
  return kExitOk;
}

int cmd_destylize(const Options& o, std::ostream& out) {
  const Model<float> model = load_model(o.ckpt);
  if (!model.has_stego()) throw ConfigError("destylize needs a checkpoint with trained stego networks");
  const fs::path dir = prepare_out(o.out);
  write_snapshot(dir, "destylize", model.config, {{"image", o.image}, {"ckpt", o.ckpt}, {"original", o.original}});
  const Tensor<float> image = read_input(o.image);
  if (image.shape() != model.config.flow.image_shape(1)) {
    throw ConfigError("image " + shape_str(image.shape()) + " does not match the model size " +
                      std::to_string(model.config.image_size()));
  }
  NoGradGuard guard;
  const Var<float> z_hat = model.decoder->extract(Var<float>(image), model.config.flow);
  const Tensor<float> recon = model.flow.inverse(z_hat).value();
  write_png(dir / "content.png", recon);
  ordered_json summary = {{"command", "destylize"}};
  if (!o.original.empty()) {
    const Tensor<float> original = fit_image(read_input(o.original), model.config.image_size());
    summary["ssim_vs_original"] = ssim_metric(quantize_8bit(recon), original);
    summary["l2_vs_original"] = l2_metric(quantize_8bit(recon), original);
  }
  write_summary(dir, summary);
  out << "wrote " << (dir / "content.png").string() << '\n';
  return kExitOk;
}

int cmd_serial(const Options& o, std::ostream& out) {
  const Model<float> model = load_model(o.ckpt);
  if (o.styles.empty()) throw ConfigError("--styles needs at least one image");
  const fs::path dir = prepare_out(o.out);
  std::string style_list;
  for (const auto& s : o.styles) style_list += (style_list.empty() ? "" : ",") + s;
  write_snapshot(dir, "serial", model.config, {{"image", o.image}, {"styles", style_list}, {"ckpt", o.ckpt}});
  const std::size_t size = model.config.image_size();
  const std::vector<Tensor<float>> contents{fit_image(read_input(o.image), size)};
  std::vector<Tensor<float>> styles;
  for (const auto& s : o.styles) styles.push_back(fit_image(read_input(s), size));

  const SerialReport report = serial_eval(model, nullptr, contents, styles);
  write_serial_csv(dir / "metrics.csv", report);
  write_frames(dir, "serial", report.frames);
  write_png(dir / "final.png", report.frames.back());
  write_summary(dir, {{"command", "serial"},
                      {"rounds", styles.size()},
                      {"ssim_vs_direct", report.mean.ours.ssim},
                      {"l2_vs_direct", report.mean.ours.l2},
                      {"recovered_ssim", report.mean.recovered.ssim}});
  out << "serial SSIM vs direct stylization " << report.mean.ours.ssim << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const Model<float> model = load_model(o.ckpt);
  const TrainConfig& cfg = model.config;
  const fs::path dir = prepare_out(o.out);
  write_snapshot(dir, "eval", cfg,
                 {{"experiment", o.experiment}, {"ckpt", o.ckpt}, {"rounds", std::to_string(o.rounds)},
                  {"baseline_steps", std::to_string(o.baseline_steps)}});
  Options corpus_opts = o;
  const Corpus corpus = make_corpus(corpus_opts, cfg);
  std::optional<BaselineTraining> baseline;
  if (o.baseline_steps > 0) baseline.emplace(train_baseline(corpus, o.baseline_steps, cfg.seed));
  const LossyBaseline<float>* base = baseline ? &baseline->net : nullptr;

  ordered_json summary = {{"command", "eval"}, {"experiment", o.experiment}};
  if (baseline) {
    summary["baseline_initial_loss"] = baseline->initial_loss;
    summary["baseline_final_loss"] = baseline->final_loss;
  }
  bool ok = true;
  if (o.experiment == "drift") {
    if (o.rounds < 1) throw ConfigError("--rounds must be >= 1");
    const Tensor<float>& image = corpus.content.front();
    const DriftCurve flow_curve = drift_experiment(flow_round_trip(model.flow, cfg.mode), image, o.rounds, true);
    write_drift_csv(dir / "metrics.csv", flow_curve);
    write_frames(dir, "flow", flow_curve.frames);
    summary["rounds"] = o.rounds;
    summary["flow_max_linf"] = flow_curve.max_linf();
    summary["flow_linf_within_1e-2"] = flow_curve.max_linf() <= 1e-2;
    summary["flow_final_ssim"] = flow_curve.points.back().ssim;
    ok = flow_curve.max_linf() <= 1e-2;
    if (base) {
      const DriftCurve base_curve = drift_experiment(baseline_round_trip(*base, cfg.mode), image, o.rounds, true);
      write_drift_csv(dir / "baseline_metrics.csv", base_curve);
      write_frames(dir, "baseline", base_curve.frames);
      const auto groups = base_curve.grouped_l2(5);
      const bool monotone = std::is_sorted(groups.begin(), groups.end());
      const bool ordered = base_curve.points.back().ssim < flow_curve.points.back().ssim;
      summary["baseline_final_ssim"] = base_curve.points.back().ssim;
      summary["baseline_ssim_below_flow"] = ordered;
      summary["baseline_l2_nondecreasing_5round"] = monotone;
      ok = ok && ordered && monotone;
    }
  } else if (o.experiment == "serial" || o.experiment == "reverse") {
    const std::size_t n = std::min(o.n_contents, corpus.content.size());
    const std::vector<Tensor<float>> contents(corpus.content.begin(), corpus.content.begin() + static_cast<long>(n));
    if (o.experiment == "serial") {
      const std::size_t k = std::min(o.n_chain, corpus.style.size());
      const std::vector<Tensor<float>> styles(corpus.style.begin(), corpus.style.begin() + static_cast<long>(k));
      const SerialReport report = serial_eval(model, base, contents, styles);
      write_serial_csv(dir / "metrics.csv", report);
      write_frames(dir, "serial", report.frames);
      summary["ours_ssim"] = report.mean.ours.ssim;
      summary["ours_l2"] = report.mean.ours.l2;
      summary["recovered_ssim"] = report.mean.recovered.ssim;
      if (base) {
        summary["baseline_ssim"] = report.mean.baseline.ssim;
        summary["ours_ssim_above_baseline"] = report.mean.ours.ssim > report.mean.baseline.ssim;
        ok = report.mean.ours.ssim > report.mean.baseline.ssim;
      }
    } else {
      std::vector<Tensor<float>> styles;
      for (std::size_t i = 0; i < n; ++i) styles.push_back(corpus.style[i % corpus.style.size()]);
      const ReverseReport report = reverse_eval(model, base, contents, styles, o.oracle_payload);
      write_reverse_csv(dir / "metrics.csv", report);
      write_frames(dir, "reverse", report.frames);
      summary["oracle_payload"] = o.oracle_payload;
      summary["ours_ssim"] = report.mean.ours.ssim;
      summary["ours_l2"] = report.mean.ours.l2;
      if (base) {
        summary["baseline_ssim"] = report.mean.baseline.ssim;
        summary["ours_ssim_above_baseline"] = report.mean.ours.ssim > report.mean.baseline.ssim;
        ok = report.mean.ours.ssim > report.mean.baseline.ssim;
      }
    }
  } else {
    throw ConfigError("unknown experiment '" + o.experiment + "' (expected drift, serial or reverse)");
  }
  summary["assertions_passed"] = ok;
  write_summary(dir, summary);
  out << o.experiment << ": " << (ok ? "orderings hold" : "orderings violated") << '\n';
  return kExitOk;
}

int cmd_selfcheck(const Options& o, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_selfcheck(o.inject_fault ? 1e-12 : 1.0);
  bool ok = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
    ok = ok && r.passed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << (ok ? "selfcheck passed" : "selfcheck FAILED") << " in " << secs << " s\n";
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Style transfer through a reversible flow with the content latent hidden in the output"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Train the flow (stage 1) or the stego networks (stage 2 / joint)");
  train->add_option("--stage", o.stage, "1, 2 or joint")->required()->check(CLI::IsMember({"1", "2", "joint"}));
  train->add_option("--config", o.config_path, "key=value config file");
  train->add_option("--content-dir", o.content_dir, "Directory of content PNGs");
  train->add_option("--style-dir", o.style_dir, "Directory of style PNGs");
  train->add_option("--ckpt", o.ckpt, "Stage-1 checkpoint (stage 2 / joint)");
  train->add_option("--set", o.overrides, "Config override key=value (repeatable)");
  train->add_option("--seed", o.seed, "Random seed");
  train->add_option("--steps", o.steps, "Optimizer steps");
  train->add_option("--out", o.out, "Run directory")->required();

  auto* sty = app.add_subcommand("stylize", "Stylize a content image and optionally embed its content latent");
  sty->add_option("--content", o.content, "Content PNG")->required();
  sty->add_option("--style", o.style, "Style PNG")->required();
  sty->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  sty->add_flag("--embed", o.embed, "Also write the stego image");
  sty->add_option("--out", o.out, "Run directory")->required();

  auto* des = app.add_subcommand("destylize", "Recover the content image from a stego image");
  des->add_option("--image", o.image, "Stego PNG")->required();
  des->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  des->add_option("--original", o.original, "Original content PNG for reporting SSIM");
  des->add_option("--out", o.out, "Run directory")->required();

  auto* ser = app.add_subcommand("serial", "Apply a chain of styles through the stego channel");
  ser->add_option("--image", o.image, "Content PNG")->required();
  ser->add_option("--styles", o.styles, "Comma-separated style PNGs")->required()->delimiter(',');
  ser->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  ser->add_option("--out", o.out, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Run the drift, serial or reverse experiment");
  ev->add_option("--experiment", o.experiment, "drift, serial or reverse")->required();
  ev->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  ev->add_option("--content-dir", o.content_dir, "Directory of content PNGs");
  ev->add_option("--style-dir", o.style_dir, "Directory of style PNGs");
  ev->add_option("--rounds", o.rounds, "Drift rounds")->capture_default_str();
  ev->add_option("--baseline-steps", o.baseline_steps, "Baseline training steps (0 disables)")->capture_default_str();
  ev->add_option("--contents", o.n_contents, "Content images used")->capture_default_str();
  ev->add_option("--chain", o.n_chain, "Styles in the serial chain")->capture_default_str();
  ev->add_flag("--oracle-payload", o.oracle_payload, "Reverse: bypass the stego channel");
  ev->add_option("--out", o.out, "Run directory")->required();

  auto* self = app.add_subcommand("selfcheck", "Run the fast invariant suite");
  self->add_flag("--inject-fault", o.inject_fault, "Shrink every tolerance so checks fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(o, out);
    if (sty->parsed()) return cmd_stylize(o, out);
    if (des->parsed()) return cmd_destylize(o, out);
    if (ser->parsed()) return cmd_serial(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    return cmd_selfcheck(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace flowsteg
