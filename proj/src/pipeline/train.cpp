#include "flowsteg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "flowsteg/optim.hpp"
#include "flowsteg/perceptual.hpp"
#include "flowsteg/random.hpp"
#include "flowsteg/stego.hpp"
#include "flowsteg/transfer.hpp"

namespace flowsteg {

namespace {

using Clock = std::chrono::steady_clock;

void require_corpus(const TrainConfig& cfg, const Corpus& corpus) {
  if (corpus.content.empty() || corpus.style.empty()) throw ConfigError("corpus needs content and style images");
  for (const auto* set : {&corpus.content, &corpus.style}) {
    for (const auto& img : *set) {
      if (img.shape() != cfg.flow.image_shape(1)) {
        throw ConfigError("corpus image " + shape_str(img.shape()) + " does not match image_size " +
                          std::to_string(cfg.image_size()));
      }
    }
  }
}

std::vector<StylePair> make_pairs(const TrainConfig& cfg, const Corpus& corpus) {
  return pair_styles(corpus, std::min(cfg.n_styles, corpus.style.size()), derive_seed(cfg.seed, 1));
}

// Batches drawn from reshuffled passes over the pairs.
class BatchStream {
 public:
  BatchStream(std::size_t count, std::size_t batch, std::uint64_t seed)
      : order_(count), batch_(batch), rng_(seed), pos_(count) {}

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.index(i)]);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  Rng rng_;
  std::size_t pos_;
};

Tensor<float> gather(const std::vector<Tensor<float>>& images, const std::vector<StylePair>& pairs,
                     const std::vector<std::size_t>& idx, bool style) {
  std::vector<Tensor<float>> items;
  items.reserve(idx.size());
  for (std::size_t i : idx) items.push_back(images[style ? pairs[i].style : pairs[i].content]);
  return stack_batch<float>(items);
}

std::vector<std::vector<std::size_t>> eval_chunks(std::size_t count, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < count; b += batch) {
    auto& chunk = out.emplace_back();
    for (std::size_t i = b; i < std::min(count, b + batch); ++i) chunk.push_back(i);
  }
  return out;
}

void require_finite(double v, std::size_t step) {
  if (!std::isfinite(v)) throw DivergenceError("non-finite loss", step);
}

// Largest per-sample ||F(G(t)) - t||_2 in the batch.
double cycle_diagnostic(const Stylization<float>& s, const FlowNetwork<float>& flow) {
  NoGradGuard guard;
  double worst = 0.0;
  for (std::size_t n = 0; n < s.latent.value().batch(); ++n) {
    const Var<float> t(batch_item(s.latent.value(), n));
    const Var<float> img(batch_item(s.image.value(), n));
    worst = std::max(worst, scalar(content_loss(t, img, flow)));
  }
  return worst;
}

struct Stage1Terms {
  Var<float> total, content, style;
};

Stage1Terms stage1_terms(const TrainConfig& cfg, const FeatureExtractor<float>& fe, const Stylization<float>& s,
                         const Var<float>& content, const Var<float>& style) {
  Stage1Terms t;
  t.content = perceptual_content_loss(s.image, content, fe);
  t.style = style_loss(s.image, style, fe);
  t.total = add(scale(t.content, static_cast<float>(cfg.lambda_c)), scale(t.style, static_cast<float>(cfg.lambda_s)));
  return t;
}

EvalMetrics evaluate_stage1(const TrainConfig& cfg, const Corpus& corpus, const std::vector<StylePair>& pairs,
                            const FlowNetwork<float>& flow, const FeatureExtractor<float>& fe) {
  NoGradGuard guard;
  EvalMetrics m;
  for (const auto& chunk : eval_chunks(pairs.size(), cfg.batch)) {
    const Var<float> ic(gather(corpus.content, pairs, chunk, false));
    const Var<float> is(gather(corpus.style, pairs, chunk, true));
    const auto s = stylize(flow, ic, is, cfg.mode);
    const auto t = stage1_terms(cfg, fe, s, ic, is);
    m.total += scalar(t.total);
    m.content += scalar(t.content);
    m.style += scalar(t.style);
    m.cycle = std::max(m.cycle, cycle_diagnostic(s, flow));
  }
  return m;
}

void step_optimizer(Adam<float>& opt, std::size_t step) {
  try {
    opt.step();
  } catch (const SingularMatrix& e) {
    throw DivergenceError(e.what(), step);
  }
  opt.zero_grad();
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Stego pass over one batch: covers, payloads and the two stego losses.
struct StegoTerms {
  Var<float> image, message, stego;
  double payload_norm = 0.0;
};

StegoTerms stego_terms(const Model<float>& model, const Var<float>& cover, const Var<float>& payload) {
  StegoTerms t;
  const Var<float> ie = model.encoder->embed(cover, payload, model.config.flow);
  const Var<float> zhat = model.decoder->extract(ie, model.config.flow);
  t.image = image_loss(ie, cover);
  t.message = message_loss(zhat, payload);
  t.stego = stego_loss(t.image, t.message, model.config.stego_weights);
  t.payload_norm = l2_norm(payload.value());
  return t;
}

}  // namespace

Model<float> clone(const Model<float>& model) {
  Model<float> out(model.config);
  out.flow = model.flow.cast<float>();
  if (model.encoder) out.encoder.emplace(model.encoder->cast<float>());
  if (model.decoder) out.decoder.emplace(model.decoder->cast<float>());
  return out;
}

TrainResult train_stage1(const TrainConfig& cfg, const Corpus& corpus, const TrainCallback& on_step) {
  cfg.validate();
  require_corpus(cfg, corpus);
  const auto start = Clock::now();
  const auto pairs = make_pairs(cfg, corpus);
  const FeatureExtractor<float> fe(cfg.extractor_seed);
  BatchStream stream(pairs.size(), cfg.batch, derive_seed(cfg.seed, 2));

  TrainResult result(Model<float>{cfg});
  FlowNetwork<float>& flow = result.model.flow;
  auto first = stream.next();
  flow.initialize_actnorm(gather(corpus.content, pairs, first, false));
  result.initial = evaluate_stage1(cfg, corpus, pairs, flow, fe);

  Adam<float> opt(flow.parameters(), {.lr = cfg.lr});
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto idx = step == 1 ? first : stream.next();
    const Var<float> ic(gather(corpus.content, pairs, idx, false));
    const Var<float> is(gather(corpus.style, pairs, idx, true));
    const auto s = stylize(flow, ic, is, cfg.mode);
    const auto t = stage1_terms(cfg, fe, s, ic, is);

    TrainLogRow row{.step = step, .total = scalar(t.total), .content = scalar(t.content), .style = scalar(t.style)};
    require_finite(row.total, step);
    row.cycle = cycle_diagnostic(s, flow);
    result.max_cycle = std::max(result.max_cycle, row.cycle);

    backward(t.total);
    step_optimizer(opt, step);
    result.log.push_back(row);
    if (on_step) on_step(row);
    if (step == 1) result.first_update = evaluate_stage1(cfg, corpus, pairs, flow, fe);
  }
  result.final = cfg.steps == 0 ? result.initial : evaluate_stage1(cfg, corpus, pairs, flow, fe);
  if (cfg.steps == 0) result.first_update = result.initial;
  result.wall_seconds = seconds_since(start);
  return result;
}

TrainResult train_stage2(const TrainConfig& cfg, const Corpus& corpus, const Model<float>* stage1,
                         const TrainCallback& on_step) {
  cfg.validate();
  if (cfg.stage == Stage::One) throw ConfigError("train_stage2 called with stage=1");
  if (!stage1) throw ConfigError("stage " + to_string(cfg.stage) + " requires a stage-1 checkpoint");
  if (!(stage1->config.flow == cfg.flow)) {
    throw ConfigError("stage-1 checkpoint flow structure does not match the configuration");
  }
  require_corpus(cfg, corpus);
  const auto start = Clock::now();
  const bool joint = cfg.stage == Stage::Joint;

  TrainResult result(clone(*stage1));
  Model<float>& model = result.model;
  model.config = cfg;
  if (!model.has_stego()) model.add_stego();
  if (!(model.encoder->parameters().front().var.shape()[0] == cfg.stego.encoder_width)) {
    throw ConfigError("stage-1 checkpoint stego widths do not match the configuration");
  }
  for (auto& p : model.flow_parameters()) p.var.set_requires_grad(joint);

  const auto pairs = make_pairs(cfg, corpus);
  const FeatureExtractor<float> fe(cfg.extractor_seed);
  BatchStream stream(pairs.size(), cfg.batch, derive_seed(cfg.seed, 3));

  // With a frozen flow the covers never change, so they are computed once.
  std::vector<Tensor<float>> covers, payloads;
  if (!joint) {
    NoGradGuard guard;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto s = stylize(model.flow, Var<float>(corpus.content[pairs[i].content]),
                             Var<float>(corpus.style[pairs[i].style]), cfg.mode);
      covers.push_back(s.image.value());
      payloads.push_back(s.content_code.value());
    }
  }
  auto cached = [&](const std::vector<Tensor<float>>& src, const std::vector<std::size_t>& idx) {
    std::vector<Tensor<float>> items;
    for (std::size_t i : idx) items.push_back(src[i]);
    return Var<float>(stack_batch<float>(items));
  };

  auto evaluate = [&]() {
    NoGradGuard guard;
    EvalMetrics m;
    double err2 = 0.0, ref2 = 0.0;
    for (const auto& chunk : eval_chunks(pairs.size(), cfg.batch)) {
      Var<float> cover, payload;
      if (joint) {
        const Var<float> ic(gather(corpus.content, pairs, chunk, false));
        const Var<float> is(gather(corpus.style, pairs, chunk, true));
        const auto s = stylize(model.flow, ic, is, cfg.mode);
        const auto t1 = stage1_terms(cfg, fe, s, ic, is);
        m.content += scalar(t1.content);
        m.style += scalar(t1.style);
        m.total += cfg.lambda_style_anchor * scalar(t1.total);
        cover = s.image;
        payload = s.content_code;
      } else {
        cover = cached(covers, chunk);
        payload = cached(payloads, chunk);
      }
      const auto t = stego_terms(model, cover, payload);
      m.image += scalar(t.image);
      m.message += scalar(t.message);
      m.total += scalar(t.stego);
      err2 += scalar(t.message) * scalar(t.message);
      ref2 += t.payload_norm * t.payload_norm;
    }
    m.latent_rel_error = ref2 > 0.0 ? std::sqrt(err2 / ref2) : std::sqrt(err2);
    return m;
  };
  result.initial = evaluate();

  Adam<float> opt(joint ? model.parameters() : model.stego_parameters(), {.lr = cfg.lr});
  std::vector<double> totals;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto idx = stream.next();
    Var<float> cover, payload, objective;
    TrainLogRow row{.step = step};
    std::optional<Stage1Terms> anchor;
    if (joint) {
      const Var<float> ic(gather(corpus.content, pairs, idx, false));
      const Var<float> is(gather(corpus.style, pairs, idx, true));
      const auto s = stylize(model.flow, ic, is, cfg.mode);
      anchor = stage1_terms(cfg, fe, s, ic, is);
      row.content = scalar(anchor->content);
      row.style = scalar(anchor->style);
      row.cycle = cycle_diagnostic(s, model.flow);
      cover = s.image;
      payload = s.content_code;
    } else {
      cover = cached(covers, idx);
      payload = cached(payloads, idx);
    }
    const auto t = stego_terms(model, cover, payload);
    objective = anchor ? add(t.stego, scale(anchor->total, static_cast<float>(cfg.lambda_style_anchor))) : t.stego;
    row.image = scalar(t.image);
    row.message = scalar(t.message);
    row.total = scalar(objective);
    require_finite(row.total, step);
    result.max_cycle = std::max(result.max_cycle, row.cycle);

    backward(objective);
    step_optimizer(opt, step);
    result.log.push_back(row);
    if (on_step) on_step(row);

    totals.push_back(row.total);
    if (step % kMonitorWindow == 0 && step >= 2 * kMonitorWindow && !result.window_violation) {
      const auto mean = [&](std::size_t end) {
        return std::accumulate(totals.begin() + static_cast<long>(end - kMonitorWindow),
                               totals.begin() + static_cast<long>(end), 0.0) /
               static_cast<double>(kMonitorWindow);
      };
      if (mean(step) > mean(step - kMonitorWindow)) {
        result.window_violation = step;
        std::cerr << "warning: stego loss rose over the " << kMonitorWindow << "-step window ending at step " << step
                  << '\n';
      }
    }
    if (step == 1) result.first_update = evaluate();
  }
  result.final = cfg.steps == 0 ? result.initial : evaluate();
  if (cfg.steps == 0) result.first_update = result.initial;
  if (!joint) {
    for (auto& p : model.flow_parameters()) p.var.set_requires_grad(true);
  }
  result.wall_seconds = seconds_since(start);
  return result;
}

void write_train_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "step,total,content,style,image,message,cycle\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.total, r.content, r.style,
                  r.image, r.message, r.cycle);
    out << buf;
  }
}

}  // namespace flowsteg
