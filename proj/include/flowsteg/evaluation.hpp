#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "flowsteg/checkpoint.hpp"
#include "flowsteg/corpus.hpp"
#include "flowsteg/transfer.hpp"

namespace flowsteg {

/// Mean squared error over all elements.
template <typename T>
double l2_metric(const Tensor<T>& a, const Tensor<T>& b);

inline constexpr std::size_t kSsimWindow = 11;

/// SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03 and
/// dynamic range 1, evaluated at every position where the window fits and
/// averaged over positions, channels and samples. Throws ShapeError when the
/// images differ in shape or are smaller than the window.
template <typename T>
double ssim_metric(const Tensor<T>& a, const Tensor<T>& b);

/// Convolutional autoencoder whose encoder halves the resolution twice with
/// 2x2 max pooling, so it cannot be inverted exactly. Stylization applies
/// AdaIN at the bottleneck.
template <typename T>
class LossyBaseline {
 public:
  explicit LossyBaseline(std::uint64_t seed, std::size_t width = 32);

  Var<T> encode(const Var<T>& image) const;
  Var<T> decode(const Var<T>& code) const;
  Var<T> reconstruct(const Var<T>& image) const { return decode(encode(image)); }
  Var<T> stylize(const Var<T>& content, const Var<T>& style, TransferMode mode) const;

  ParamList<T> parameters() const;

 private:
  std::vector<ConvLayer<T>> enc_;
  std::vector<ConvLayer<T>> dec_;
};

struct BaselineTraining {
  LossyBaseline<float> net;
  /// ||reconstruct(x) - x||_2 over the whole corpus, before and after.
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> step_losses;
};

/// Trains on reconstruction of every corpus image (content and style).
BaselineTraining train_baseline(const Corpus& corpus, std::size_t steps, std::uint64_t seed, double lr = 1e-3,
                                std::size_t batch = 4);

struct DriftPoint {
  std::size_t round = 0;
  double l2 = 0.0;
  double ssim = 1.0;
  double linf = 0.0;
};

struct DriftCurve {
  std::vector<DriftPoint> points;  // round 0 .. rounds
  std::vector<Tensor<float>> frames;

  std::size_t rounds() const noexcept { return points.empty() ? 0 : points.size() - 1; }
  double max_linf() const;
  /// Means of consecutive groups of `group` rounds, starting at round 1.
  std::vector<double> grouped_l2(std::size_t group) const;
};

/// One round of self-stylization: x -> decode(adain(encode(x), encode(x))),
/// clamped to [0, 1] so every round yields a valid image.
using RoundTrip = std::function<Tensor<float>(const Tensor<float>&)>;

/// Feeds each round's output back in and records metrics against I_0.
DriftCurve drift_experiment(const RoundTrip& round_trip, const Tensor<float>& image, std::size_t rounds,
                            bool keep_frames = false);

RoundTrip flow_round_trip(const FlowNetwork<float>& flow, TransferMode mode);
RoundTrip baseline_round_trip(const LossyBaseline<float>& net, TransferMode mode);

struct ImageMetrics {
  double l2 = 0.0;
  double ssim = 0.0;
};

ImageMetrics compare(const Tensor<float>& a, const Tensor<float>& b);

struct SerialRow {
  ImageMetrics ours;       // final stego image vs direct stylization with the last style
  ImageMetrics recovered;  // G(extracted latent) vs the original content
  ImageMetrics baseline;   // chained baseline stylization vs its direct stylization
};

struct SerialReport {
  std::vector<SerialRow> rows;
  SerialRow mean;
  std::vector<Tensor<float>> frames;  // ours, per round, for the first content
};

/// Serial style transfer. Ours: stylize and embed with the first style, then
/// for every further style extract the content latent from the current stego
/// image, stylize it and re-embed it. The baseline chains its own
/// stylizations. Each method is compared to its own direct stylization of the
/// original content with the last style. `baseline` may be null.
SerialReport serial_eval(const Model<float>& model, const LossyBaseline<float>* baseline,
                         const std::vector<Tensor<float>>& contents, const std::vector<Tensor<float>>& styles);

struct ReverseRow {
  ImageMetrics ours;      // G(D_msg(I_e)) vs I_c
  ImageMetrics baseline;  // baseline de-stylization vs I_c
};

struct ReverseReport {
  std::vector<ReverseRow> rows;
  ReverseRow mean;
  std::vector<Tensor<float>> frames;  // stego image and reconstruction for the first content
};

/// Reverse style transfer. Ours: stylize, embed, extract and decode the
/// extracted latent with G. With `oracle_payload` the true content latent
/// replaces the extracted one, which isolates the flow. The baseline
/// stylizes with its autoencoder and de-stylizes by transferring its result
/// back to the content image's bottleneck statistics. `styles[i]` goes with
/// `contents[i]`.
ReverseReport reverse_eval(const Model<float>& model, const LossyBaseline<float>* baseline,
                           const std::vector<Tensor<float>>& contents, const std::vector<Tensor<float>>& styles,
                           bool oracle_payload = false);

void write_drift_csv(const std::filesystem::path& path, const DriftCurve& curve);
void write_serial_csv(const std::filesystem::path& path, const SerialReport& report);
void write_reverse_csv(const std::filesystem::path& path, const ReverseReport& report);
/// Writes frames as frames/<prefix>_<index>.png under `dir`.
void write_frames(const std::filesystem::path& dir, const std::string& prefix, const std::vector<Tensor<float>>& frames);

extern template class LossyBaseline<float>;
extern template class LossyBaseline<double>;

}  // namespace flowsteg
