#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "flowsteg/checkpoint.hpp"
#include "flowsteg/config.hpp"
#include "flowsteg/corpus.hpp"

namespace flowsteg {

/// Bound on the latent cycle error ||F(G(t)) - t||_2 during stage 1.
inline constexpr double kCycleTolerance = 1e-3;
/// Width of the windows compared by the stage-2 loss monitor.
inline constexpr std::size_t kMonitorWindow = 50;

struct TrainLogRow {
  std::size_t step = 0;
  double total = 0.0;
  double content = 0.0;
  double style = 0.0;
  double image = 0.0;
  double message = 0.0;
  /// Largest per-sample ||F(G(t)) - t||_2 in the step's batch.
  double cycle = 0.0;
};

/// Losses summed over the fixed evaluation set (every content image with its
/// paired style).
struct EvalMetrics {
  double total = 0.0;
  double content = 0.0;
  double style = 0.0;
  double image = 0.0;
  double message = 0.0;
  /// ||z_hat - z_c||_2 / ||z_c||_2 over the evaluation set.
  double latent_rel_error = 0.0;
  double cycle = 0.0;
};

struct TrainResult {
  explicit TrainResult(Model<float> m) : model(std::move(m)) {}

  Model<float> model;
  std::vector<TrainLogRow> log;
  EvalMetrics initial;       // before the first update
  EvalMetrics first_update;  // after the first update
  EvalMetrics final;
  double max_cycle = 0.0;
  /// Step at which the mean loss of a monitor window first exceeded the mean
  /// of the window before it (stage 2 and joint only).
  std::optional<std::size_t> window_violation;
  double wall_seconds = 0.0;
};

using TrainCallback = std::function<void(const TrainLogRow&)>;

/// Optimizes the flow on lambda_c * perceptual_content_loss + lambda_s * style_loss.
/// Throws DivergenceError (with the step) on a non-finite loss or a singular update.
TrainResult train_stage1(const TrainConfig& config, const Corpus& corpus, const TrainCallback& on_step = {});

/// Trains the stego networks on top of a stage-1 model. With Stage::Two the
/// flow is frozen; with Stage::Joint it is trained as well, with the stage-1
/// objective added at weight lambda_style_anchor. The input model is not
/// modified. Throws ConfigError when `stage1` is null or structurally
/// different from `config`.
TrainResult train_stage2(const TrainConfig& config, const Corpus& corpus, const Model<float>* stage1,
                         const TrainCallback& on_step = {});

/// step,total,content,style,image,message,cycle
void write_train_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& log);

/// Deep copy of a model; the copy shares no parameter storage.
Model<float> clone(const Model<float>& model);

}  // namespace flowsteg
