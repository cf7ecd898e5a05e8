#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "flowsteg/evaluation.hpp"
#include "flowsteg/image_io.hpp"
#include "flowsteg/optim.hpp"
#include "flowsteg/random.hpp"
#include "flowsteg/stego.hpp"

namespace flowsteg {

namespace fs = std::filesystem;

template <typename T>
LossyBaseline<T>::LossyBaseline(std::uint64_t seed, std::size_t width) {
  if (width == 0) throw ConfigError("baseline width must be positive");
  Rng rng(seed);
  const Conv2dSpec same{1, 1};
  const double gain = std::sqrt(2.0);
  enc_.push_back(make_conv<T>(rng, 3, width, 3, same, gain));
  enc_.push_back(make_conv<T>(rng, width, 2 * width, 3, same, gain));
  enc_.push_back(make_conv<T>(rng, 2 * width, 2 * width, 3, same, gain));
  dec_.push_back(make_conv<T>(rng, 2 * width, width, 3, same, gain));
  dec_.push_back(make_conv<T>(rng, width, width, 3, same, gain));
  dec_.push_back(make_conv<T>(rng, width, 3, 3, same, 1.0));
}

template <typename T>
Var<T> LossyBaseline<T>::encode(const Var<T>& image) const {
  const T slope = T(0.2);
  Var<T> h = max_pool2(leaky_relu(enc_[0](image), slope));
  h = max_pool2(leaky_relu(enc_[1](h), slope));
  return enc_[2](h);
}

template <typename T>
Var<T> LossyBaseline<T>::decode(const Var<T>& code) const {
  const T slope = T(0.2);
  Var<T> h = leaky_relu(dec_[0](upsample2(code)), slope);
  h = leaky_relu(dec_[1](upsample2(h)), slope);
  return dec_[2](h);
}

template <typename T>
Var<T> LossyBaseline<T>::stylize(const Var<T>& content, const Var<T>& style, TransferMode mode) const {
  return decode(adain(encode(content), encode(style), mode));
}

template <typename T>
ParamList<T> LossyBaseline<T>::parameters() const {
  ParamList<T> out;
  for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].append_params(out, "baseline.enc" + std::to_string(i));
  for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].append_params(out, "baseline.dec" + std::to_string(i));
  return out;
}

template class LossyBaseline<float>;
template class LossyBaseline<double>;

BaselineTraining train_baseline(const Corpus& corpus, std::size_t steps, std::uint64_t seed, double lr,
                                std::size_t batch) {
  std::vector<Tensor<float>> images = corpus.content;
  images.insert(images.end(), corpus.style.begin(), corpus.style.end());
  if (images.empty()) throw ConfigError("train_baseline: empty corpus");
  if (batch == 0) throw ConfigError("train_baseline: batch must be positive");

  BaselineTraining out{LossyBaseline<float>(derive_seed(seed, 0)), 0.0, 0.0, {}};
  auto corpus_loss = [&]() {
    NoGradGuard guard;
    double acc = 0.0;
    for (std::size_t b = 0; b < images.size(); b += batch) {
      const std::span<const Tensor<float>> chunk(images.data() + b, std::min(batch, images.size() - b));
      const Var<float> x(stack_batch(chunk));
      const double l = scalar(l2_norm(sub(out.net.reconstruct(x), x)));
      acc += l * l;
    }
    return std::sqrt(acc);
  };
  out.initial_loss = corpus_loss();

  Adam<float> opt(out.net.parameters(), {.lr = lr});
  Rng rng(derive_seed(seed, 1));
  std::vector<std::size_t> order(images.size());
  std::size_t pos = order.size();
  for (std::size_t step = 1; step <= steps; ++step) {
    std::vector<Tensor<float>> items;
    while (items.size() < batch) {
      if (pos == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        pos = 0;
      }
      items.push_back(images[order[pos++]]);
    }
    const Var<float> x(stack_batch<float>(items));
    const Var<float> loss = l2_norm(sub(out.net.reconstruct(x), x));
    const double l = scalar(loss);
    if (!std::isfinite(l)) throw DivergenceError("baseline loss is not finite", step);
    out.step_losses.push_back(l);
    backward(loss);
    opt.step();
    opt.zero_grad();
  }
  out.final_loss = corpus_loss();
  return out;
}

double DriftCurve::max_linf() const {
  double m = 0.0;
  for (const auto& p : points) m = std::max(m, p.linf);
  return m;
}

std::vector<double> DriftCurve::grouped_l2(std::size_t group) const {
  std::vector<double> out;
  if (group == 0) return out;
  for (std::size_t start = 1; start + group <= points.size(); start += group) {
    double acc = 0.0;
    for (std::size_t i = start; i < start + group; ++i) acc += points[i].l2;
    out.push_back(acc / static_cast<double>(group));
  }
  return out;
}

DriftCurve drift_experiment(const RoundTrip& round_trip, const Tensor<float>& image, std::size_t rounds,
                            bool keep_frames) {
  if (rounds < 1) throw ConfigError("drift_experiment: rounds must be >= 1");
  DriftCurve curve;
  curve.points.push_back({0, 0.0, 1.0, 0.0});
  if (keep_frames) curve.frames.push_back(image);
  Tensor<float> current = image;
  for (std::size_t r = 1; r <= rounds; ++r) {
    current = round_trip(current);
    curve.points.push_back({r, l2_metric(current, image), ssim_metric(current, image), max_abs_diff(current, image)});
    if (keep_frames) curve.frames.push_back(current);
  }
  return curve;
}

namespace {

Tensor<float> clamp_image(Tensor<float> t) {
  for (auto& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
  return t;
}

}  // namespace

RoundTrip flow_round_trip(const FlowNetwork<float>& flow, TransferMode mode) {
  return [&flow, mode](const Tensor<float>& x) {
    NoGradGuard guard;
    const Var<float> z = flow.forward(Var<float>(x));
    return clamp_image(flow.inverse(adain(z, z, mode)).value());
  };
}

RoundTrip baseline_round_trip(const LossyBaseline<float>& net, TransferMode mode) {
  return [&net, mode](const Tensor<float>& x) {
    NoGradGuard guard;
    const Var<float> f = net.encode(Var<float>(x));
    return clamp_image(net.decode(adain(f, f, mode)).value());
  };
}

ImageMetrics compare(const Tensor<float>& a, const Tensor<float>& b) { return {l2_metric(a, b), ssim_metric(a, b)}; }

namespace {

void require_stego(const Model<float>& model, const char* what) {
  if (!model.has_stego()) throw ConfigError(std::string(what) + ": checkpoint has no stego networks");
}

template <typename Row>
void accumulate_mean(Row& mean, const Row& row, double weight);

template <>
void accumulate_mean(SerialRow& mean, const SerialRow& row, double w) {
  for (auto [dst, src] : {std::pair{&mean.ours, &row.ours}, std::pair{&mean.recovered, &row.recovered},
                          std::pair{&mean.baseline, &row.baseline}}) {
    dst->l2 += w * src->l2;
    dst->ssim += w * src->ssim;
  }
}

template <>
void accumulate_mean(ReverseRow& mean, const ReverseRow& row, double w) {
  for (auto [dst, src] : {std::pair{&mean.ours, &row.ours}, std::pair{&mean.baseline, &row.baseline}}) {
    dst->l2 += w * src->l2;
    dst->ssim += w * src->ssim;
  }
}

}  // namespace

SerialReport serial_eval(const Model<float>& model, const LossyBaseline<float>* baseline,
                         const std::vector<Tensor<float>>& contents, const std::vector<Tensor<float>>& styles) {
  require_stego(model, "serial_eval");
  if (contents.empty() || styles.empty()) throw ConfigError("serial_eval needs contents and at least one style");
  NoGradGuard guard;
  const auto& cfg = model.config;
  const auto& flow = model.flow;
  SerialReport report;
  for (std::size_t i = 0; i < contents.size(); ++i) {
    const Var<float> content(contents[i]);
    const Var<float> first_style(styles.front());
    const auto s = stylize(flow, content, first_style, cfg.mode);
    Var<float> stego = model.encoder->embed(s.image, s.content_code, cfg.flow);
    if (i == 0) report.frames.push_back(stego.value());
    for (std::size_t k = 1; k < styles.size(); ++k) {
      const Var<float> z_hat = model.decoder->extract(stego, cfg.flow);
      const auto next = stylize_latent(flow, z_hat, Var<float>(styles[k]), cfg.mode);
      stego = model.encoder->embed(next.image, z_hat, cfg.flow);
      if (i == 0) report.frames.push_back(stego.value());
    }
    SerialRow row;
    const Var<float> last_style(styles.back());
    row.ours = compare(stego.value(), stylize(flow, content, last_style, cfg.mode).image.value());
    row.recovered = compare(flow.inverse(model.decoder->extract(stego, cfg.flow)).value(), contents[i]);
    if (baseline) {
      Var<float> chain = content;
      for (const auto& st : styles) chain = baseline->stylize(chain, Var<float>(st), cfg.mode);
      row.baseline = compare(chain.value(), baseline->stylize(content, last_style, cfg.mode).value());
    }
    report.rows.push_back(row);
    accumulate_mean(report.mean, row, 1.0 / static_cast<double>(contents.size()));
  }
  return report;
}

ReverseReport reverse_eval(const Model<float>& model, const LossyBaseline<float>* baseline,
                           const std::vector<Tensor<float>>& contents, const std::vector<Tensor<float>>& styles,
                           bool oracle_payload) {
  if (!oracle_payload) require_stego(model, "reverse_eval");
  if (contents.empty() || styles.size() != contents.size()) {
    throw ConfigError("reverse_eval needs one style per content image");
  }
  NoGradGuard guard;
  const auto& cfg = model.config;
  ReverseReport report;
  for (std::size_t i = 0; i < contents.size(); ++i) {
    const Var<float> content(contents[i]);
    const Var<float> style(styles[i]);
    const auto s = stylize(model.flow, content, style, cfg.mode);
    Var<float> z_hat = s.content_code;
    Tensor<float> stego = s.image.value();
    if (!oracle_payload) {
      const Var<float> ie = model.encoder->embed(s.image, s.content_code, cfg.flow);
      stego = ie.value();
      z_hat = model.decoder->extract(ie, cfg.flow);
    }
    const Tensor<float> recon = model.flow.inverse(z_hat).value();
    if (i == 0) report.frames = {stego, recon};
    ReverseRow row;
    row.ours = compare(recon, contents[i]);
    if (baseline) {
      const Var<float> stylized = baseline->stylize(content, style, cfg.mode);
      row.baseline = compare(baseline->stylize(stylized, content, cfg.mode).value(), contents[i]);
    }
    report.rows.push_back(row);
    accumulate_mean(report.mean, row, 1.0 / static_cast<double>(contents.size()));
  }
  return report;
}

namespace {

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_drift_csv(const fs::path& path, const DriftCurve& curve) {
  auto out = open_csv(path);
  out << "round,l2,ssim,linf\n";
  for (const auto& p : curve.points) {
    out << p.round << ',' << num(p.l2) << ',' << num(p.ssim) << ',' << num(p.linf) << '\n';
  }
}

void write_serial_csv(const fs::path& path, const SerialReport& report) {
  auto out = open_csv(path);
  out << "content,ours_l2,ours_ssim,recovered_l2,recovered_ssim,baseline_l2,baseline_ssim\n";
  auto line = [&](const std::string& id, const SerialRow& r) {
    out << id << ',' << num(r.ours.l2) << ',' << num(r.ours.ssim) << ',' << num(r.recovered.l2) << ','
        << num(r.recovered.ssim) << ',' << num(r.baseline.l2) << ',' << num(r.baseline.ssim) << '\n';
  };
  for (std::size_t i = 0; i < report.rows.size(); ++i) line(std::to_string(i), report.rows[i]);
  line("mean", report.mean);
}

void write_reverse_csv(const fs::path& path, const ReverseReport& report) {
  auto out = open_csv(path);
  out << "content,ours_l2,ours_ssim,baseline_l2,baseline_ssim\n";
  auto line = [&](const std::string& id, const ReverseRow& r) {
    out << id << ',' << num(r.ours.l2) << ',' << num(r.ours.ssim) << ',' << num(r.baseline.l2) << ','
        << num(r.baseline.ssim) << '\n';
  };
  for (std::size_t i = 0; i < report.rows.size(); ++i) line(std::to_string(i), report.rows[i]);
  line("mean", report.mean);
}

void write_frames(const fs::path& dir, const std::string& prefix, const std::vector<Tensor<float>>& frames) {
  const fs::path frames_dir = dir / "frames";
  fs::create_directories(frames_dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%03zu.png", prefix.c_str(), i);
    write_png(frames_dir / name, frames[i]);
  }
}

}  // namespace flowsteg
