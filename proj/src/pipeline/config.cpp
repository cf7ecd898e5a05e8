#include "flowsteg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace flowsteg {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::One: return "1";
    case Stage::Two: return "2";
    case Stage::Joint: return "joint";
  }
  return "?";
}

Stage parse_stage(const std::string& text) {
  if (text == "1") return Stage::One;
  if (text == "2") return Stage::Two;
  if (text == "joint") return Stage::Joint;
  throw ConfigError("unknown stage '" + text + "' (expected 1, 2 or joint)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value '" + text + "' for " + key);
  return value;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

void TrainConfig::validate() const {
  flow.validate();
  if (flow.channels != 3) throw ConfigError("flow.channels must be 3 for RGB images");
  if (flow.image_size % 8 != 0) throw ConfigError("image_size must be divisible by 8 for the feature extractor");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(lambda_c >= 0.0) || !(lambda_s >= 0.0) || !(lambda_style_anchor >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (lambda_c == 0.0 && lambda_s == 0.0) throw ConfigError("lambda_c and lambda_s must not both be zero");
  stego_weights.validate();
  if (n_styles == 0) throw ConfigError("n_styles must be >= 1");
  if (synth_images < 2) throw ConfigError("synth_images must be >= 2");
  if (stego.encoder_width == 0 || stego.decoder_width == 0) throw ConfigError("stego widths must be >= 1");
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  using std::size_t;
  if (key == "stage") stage = parse_stage(value);
  else if (key == "image_size") flow.image_size = parse_number<size_t>(key, value);
  else if (key == "batch") batch = parse_number<size_t>(key, value);
  else if (key == "steps") steps = parse_number<size_t>(key, value);
  else if (key == "lr") lr = parse_number<double>(key, value);
  else if (key == "lambda_c") lambda_c = parse_number<double>(key, value);
  else if (key == "lambda_s") lambda_s = parse_number<double>(key, value);
  else if (key == "lambda_img") stego_weights.image = parse_number<double>(key, value);
  else if (key == "lambda_msg") stego_weights.message = parse_number<double>(key, value);
  else if (key == "lambda_style_anchor") lambda_style_anchor = parse_number<double>(key, value);
  else if (key == "mode") mode = parse_transfer_mode(value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "extractor_seed") extractor_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "n_styles") n_styles = parse_number<size_t>(key, value);
  else if (key == "synth_images") synth_images = parse_number<size_t>(key, value);
  else if (key == "flow.n_blocks") flow.n_blocks = parse_number<size_t>(key, value);
  else if (key == "flow.steps_per_block") flow.steps_per_block = parse_number<size_t>(key, value);
  else if (key == "flow.squeeze_factor") flow.squeeze_factor = parse_number<size_t>(key, value);
  else if (key == "flow.hidden_width") flow.hidden_width = parse_number<size_t>(key, value);
  else if (key == "stego.encoder_width") stego.encoder_width = parse_number<size_t>(key, value);
  else if (key == "stego.decoder_width") stego.decoder_width = parse_number<size_t>(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "stage=" << to_string(stage) << '\n'
     << "image_size=" << flow.image_size << '\n'
     << "batch=" << batch << '\n'
     << "steps=" << steps << '\n'
     << "lr=" << fmt(lr) << '\n'
     << "lambda_c=" << fmt(lambda_c) << '\n'
     << "lambda_s=" << fmt(lambda_s) << '\n'
     << "lambda_img=" << fmt(stego_weights.image) << '\n'
     << "lambda_msg=" << fmt(stego_weights.message) << '\n'
     << "lambda_style_anchor=" << fmt(lambda_style_anchor) << '\n'
     << "mode=" << to_string(mode) << '\n'
     << "seed=" << seed << '\n'
     << "extractor_seed=" << extractor_seed << '\n'
     << "n_styles=" << n_styles << '\n'
     << "synth_images=" << synth_images << '\n'
     << "flow.n_blocks=" << flow.n_blocks << '\n'
     << "flow.steps_per_block=" << flow.steps_per_block << '\n'
     << "flow.squeeze_factor=" << flow.squeeze_factor << '\n'
     << "flow.hidden_width=" << flow.hidden_width << '\n'
     << "stego.encoder_width=" << stego.encoder_width << '\n'
     << "stego.decoder_width=" << stego.decoder_width << '\n';
  return os.str();
}

TrainConfig TrainConfig::parse(const std::string& text, TrainConfig base) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig TrainConfig::load(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), std::move(base));
}

TrainConfig TrainConfig::parse(const std::string& text) { return parse(text, TrainConfig{}); }

TrainConfig TrainConfig::load(const std::string& path) { return load(path, TrainConfig{}); }

}  // namespace flowsteg
