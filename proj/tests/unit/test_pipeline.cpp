#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "flowsteg/checkpoint.hpp"
#include "flowsteg/corpus.hpp"
#include "flowsteg/image_io.hpp"
#include "flowsteg/optim.hpp"
#include "flowsteg/random.hpp"
#include "flowsteg/train.hpp"

using namespace flowsteg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("flowsteg_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.flow.image_size = 16;
  cfg.flow.hidden_width = 8;
  cfg.flow.steps_per_block = 2;
  cfg.stego.encoder_width = 4;
  cfg.stego.decoder_width = 4;
  cfg.batch = 2;
  cfg.steps = 3;
  cfg.lr = 1e-3;
  cfg.synth_images = 8;
  cfg.seed = 5;
  return cfg;
}

bool same_tensors(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (const auto& [name, t] : a.tensors) {
    const auto it = b.tensors.find(name);
    if (it == b.tensors.end() || !bit_equal(t, it->second)) return false;
  }
  return true;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("PNG write and read") {
  TempDir dir("png");
  Rng rng(1);
  const auto img = rng.uniform_tensor<float>({1, 3, 9, 13}, -0.2, 1.2);
  write_png(dir.path / "a.png", img);
  const auto back = read_png(dir.path / "a.png");
  CHECK(back.shape() == Shape{1, 3, 9, 13});
  CHECK(bit_equal(back, quantize_8bit(img)));
  for (float v : back.values()) CHECK((v >= 0.0f && v <= 1.0f));

  std::ofstream(dir.path / "bad.png") << "not a png";
  CHECK_THROWS_AS(read_png(dir.path / "bad.png"), FormatError);
  CHECK_THROWS_AS(read_png(dir.path / "missing.png"), FormatError);
}

TEST_CASE("resizing and cropping") {
  const Tensor<float> flat({1, 3, 10, 20}, 0.375f);
  const auto r = resize_bilinear(flat, 7, 33);
  CHECK(r.shape() == Shape{1, 3, 7, 33});
  for (float v : r.values()) CHECK(v == doctest::Approx(0.375f));
  Rng rng(2);
  const auto img = rng.uniform_tensor<float>({1, 3, 6, 8});
  CHECK(bit_equal(resize_bilinear(img, 6, 8), img));

  // Full scale: shorter side 512, crop 256. Desk scale: 128 and 64.
  CHECK(resize_shorter_side(Tensor<float>({1, 3, 300, 400}), 512).shape() == Shape{1, 3, 512, 683});
  CHECK(resize_shorter_side(Tensor<float>({1, 3, 90, 60}), 128).shape() == Shape{1, 3, 192, 128});
  CHECK(center_crop(Tensor<float>({1, 3, 512, 683}), 256).shape() == Shape{1, 3, 256, 256});
  const auto c = crop(img, 1, 2, 3, 4);
  CHECK(c.shape() == Shape{1, 3, 3, 4});
  CHECK(c.at(0, 2, 0, 0) == img.at(0, 2, 1, 2));
  CHECK_THROWS(crop(img, 4, 0, 3, 3));
}

TEST_CASE("synthetic corpus") {
  const auto a = synth_corpus(3, 16, 64), b = synth_corpus(3, 16, 64);
  CHECK(a.content.size() == 8);
  CHECK(a.style.size() == 8);
  CHECK(a.image_size() == 64);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(bit_equal(a.content[i], b.content[i]));
    CHECK(bit_equal(a.style[i], b.style[i]));
    for (const auto* t : {&a.content[i], &a.style[i]}) {
      CHECK(t->shape() == Shape{1, 3, 64, 64});
      for (float v : t->values()) REQUIRE((v >= 0.0f && v <= 1.0f));
    }
  }
  CHECK_FALSE(bit_equal(synth_corpus(4, 16, 64).content[2], a.content[2]));
}

TEST_CASE("corpus loading from directories") {
  TempDir content("content"), style("style");
  Rng rng(4);
  for (std::size_t i = 0; i < 3; ++i) {
    write_png(content.path / ("c" + std::to_string(i) + ".png"), rng.uniform_tensor<float>({1, 3, 40 + i * 7, 50}));
    write_png(style.path / ("s" + std::to_string(i) + ".png"), rng.uniform_tensor<float>({1, 3, 60, 33 + i}));
  }
  std::ofstream(content.path / "junk.png") << "garbage";

  const auto a = load_corpus(content.path, style.path, 16, 9);
  const auto b = load_corpus(content.path, style.path, 16, 9);
  REQUIRE(a.content.size() == 3);
  REQUIRE(a.style.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.content[i].shape() == Shape{1, 3, 16, 16});
    CHECK(bit_equal(a.content[i], b.content[i]));
    CHECK(bit_equal(a.style[i], b.style[i]));
  }

  TempDir empty("empty");
  CHECK_THROWS_AS(load_corpus(empty.path, style.path, 16, 9), ConfigError);
  CHECK_THROWS_AS(load_corpus(content.path, content.path, 16, 9), ConfigError);
  fs::copy_file(content.path / "c0.png", style.path / "shared.png");
  CHECK_THROWS_AS(load_corpus(content.path, style.path, 16, 9), ConfigError);
}

TEST_CASE("style pairing") {
  const auto corpus = synth_corpus(5, 24, 16);
  const auto one = pair_styles(corpus, 1, 6);
  REQUIRE(one.size() == 12);
  for (const auto& p : one) CHECK(p.style == one.front().style);

  const auto a = pair_styles(corpus, 10, 7), b = pair_styles(corpus, 10, 7);
  std::set<std::size_t> used;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].content == i);
    CHECK(a[i].style == b[i].style);
    CHECK(a[i].style < corpus.style.size());
    used.insert(a[i].style);
  }
  CHECK(used.size() <= 10);
  CHECK(used.size() > 1);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  Var<double> p = Var<double>::parameter(Tensor<double>({3}, std::vector<double>{1, -2, 3}));
  Adam<double> opt({{"p", p}}, {});
  for (int i = 0; i < 5; ++i) opt.step();
  CHECK(p.value().storage() == std::vector<double>{1, -2, 3});
  CHECK(opt.steps() == 5);
}

TEST_CASE("adam: scalar quadratic converges") {
  Var<double> x = Var<double>::parameter(Tensor<double>({1}, 0.0));
  Adam<double> opt({{"x", x}}, {0.1});
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    backward(sum_squares(sub(x, Var<double>(Tensor<double>({1}, 3.0)))));
    opt.step();
  }
  CHECK(std::abs(x.value()[0] - 3.0) <= 1e-3);
}

TEST_CASE("adam: determinant guard rejects a rank-collapsing update") {
  Var<double> m = Var<double>::parameter(Tensor<double>({2, 2}, std::vector<double>{1, 0, 0, 1}));
  Adam<double> opt({{"m", m, ParamKind::InvConvMatrix}}, {0.5});
  // Adam's first step moves every entry by lr against the gradient sign,
  // giving [[0.5, 0.5], [0.5, 0.5]].
  m.node()->accumulate(Tensor<double>({2, 2}, std::vector<double>{1, -1, -1, 1}));
  CHECK_THROWS_AS(opt.step(), SingularMatrix);
  CHECK(m.value().storage() == std::vector<double>{1, 0, 0, 1});
  CHECK(opt.steps() == 0);
}

TEST_CASE("config text roundtrip and validation") {
  TrainConfig cfg = tiny_config();
  cfg.stage = Stage::Joint;
  cfg.mode = TransferMode::StdOnly;
  cfg.stego_weights = {2.5, 0.5};
  const auto text = cfg.serialize();
  CHECK(TrainConfig::parse(text).serialize() == text);
  CHECK(TrainConfig::parse("# comment\n\nsteps = 7\n").steps == 7);
  CHECK(parse_stage("1") == Stage::One);
  CHECK(parse_stage("joint") == Stage::Joint);
  CHECK_THROWS_AS(parse_stage("3"), ConfigError);
  CHECK_THROWS_AS(cfg.set("nope", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("batch", "four"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("image_size=30").validate(), ConfigError);
  CHECK_THROWS_AS(TrainConfig::load("/nonexistent/flowsteg.cfg"), ConfigError);
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  TempDir dir("ckpt");
  TrainConfig cfg = tiny_config();
  Model<float> model(cfg);
  model.flow.randomize(11);
  model.add_stego();
  const auto ckpt = to_checkpoint(model);
  CHECK(ckpt.tensors.size() == model.parameters().size());
  save_checkpoint(ckpt, dir.path / "m.ckpt");
  CHECK(fs::exists(sidecar_path(dir.path / "m.ckpt")));
  const auto back = load_checkpoint(dir.path / "m.ckpt");
  CHECK(same_tensors(ckpt, back));
  CHECK(back.config.serialize() == cfg.serialize());
  const auto rebuilt = from_checkpoint(back, &cfg.flow);
  CHECK(rebuilt.has_stego());
  CHECK(same_tensors(to_checkpoint(rebuilt), ckpt));
  CHECK(rebuilt.flow.actnorm_initialized());

  save_checkpoint(to_checkpoint(rebuilt), dir.path / "again.ckpt");
  CHECK(read_bytes(dir.path / "m.ckpt") == read_bytes(dir.path / "again.ckpt"));
}

TEST_CASE("checkpoint format errors") {
  TrainConfig cfg = tiny_config();
  const Model<float> model(cfg);
  const auto bytes = encode_tensors(to_checkpoint(model).tensors);
  CHECK(decode_tensors(bytes).size() == model.parameters().size());

  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_tensors(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0u);
  }
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(decode_tensors(bad), FormatError);

  // Every truncation point that cuts a record or the header fails with an offset.
  std::size_t checked = 0;
  for (std::size_t len = 0; len < bytes.size(); len += 1 + len / 16) {
    try {
      const auto out = decode_tensors(std::span<const std::uint8_t>(bytes.data(), len));
      // A cut that falls exactly between records decodes to fewer tensors.
      CHECK(out.size() < model.parameters().size());
    } catch (const FormatError& e) {
      CHECK(e.offset().has_value());
      ++checked;
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("checkpoint structure errors") {
  TempDir dir("ckpt_err");
  TrainConfig cfg = tiny_config();
  const Model<float> model(cfg);
  auto ckpt = to_checkpoint(model);

  auto extra = ckpt;
  extra.tensors["flow.b9.s0.actnorm.scale"] = Tensor<float>({3});
  CHECK_THROWS_AS(from_checkpoint(extra), FormatError);
  auto missing = ckpt;
  missing.tensors.erase(missing.tensors.begin());
  CHECK_THROWS_AS(from_checkpoint(missing), FormatError);
  auto shape = ckpt;
  shape.tensors.begin()->second = Tensor<float>({1, 2, 3});
  CHECK_THROWS_AS(from_checkpoint(shape), FormatError);

  FlowConfig other = cfg.flow;
  other.hidden_width = 16;
  CHECK_THROWS_AS(from_checkpoint(ckpt, &other), ConfigError);

  CHECK_THROWS_AS(load_checkpoint(dir.path / "absent.ckpt"), ConfigError);
  save_checkpoint(ckpt, dir.path / "x.ckpt");
  fs::remove(sidecar_path(dir.path / "x.ckpt"));
  CHECK_THROWS_AS(load_checkpoint(dir.path / "x.ckpt"), FormatError);
}

TEST_CASE("stage 1 training is deterministic and keeps the reconstruction bound") {
  const TrainConfig cfg = tiny_config();
  const auto corpus = synth_corpus(cfg.seed, cfg.synth_images, cfg.image_size());
  std::size_t calls = 0;
  const auto a = train_stage1(cfg, corpus, [&](const TrainLogRow&) { ++calls; });
  const auto b = train_stage1(cfg, corpus);
  CHECK(calls == cfg.steps);
  REQUIRE(a.log.size() == cfg.steps);
  CHECK(same_tensors(to_checkpoint(a.model), to_checkpoint(b.model)));
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].step == i + 1);
    CHECK(a.log[i].cycle <= kCycleTolerance);
    CHECK(a.log[i].total == b.log[i].total);
  }
  CHECK(a.max_cycle <= kCycleTolerance);
  CHECK(a.model.flow.actnorm_initialized());
  CHECK_FALSE(same_tensors(to_checkpoint(a.model), to_checkpoint(Model<float>(cfg))));

  TempDir dir("csv");
  write_train_csv(dir.path / "a.csv", a.log);
  write_train_csv(dir.path / "b.csv", b.log);
  CHECK(read_bytes(dir.path / "a.csv") == read_bytes(dir.path / "b.csv"));
  std::ifstream in(dir.path / "a.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,total,content,style,image,message,cycle");
}

TEST_CASE("stage 2 freezes the flow, joint mode trains it") {
  TrainConfig cfg = tiny_config();
  const auto corpus = synth_corpus(cfg.seed, cfg.synth_images, cfg.image_size());
  const auto s1 = train_stage1(cfg, corpus);
  const auto before = to_checkpoint(s1.model);

  cfg.stage = Stage::Two;
  const auto s2 = train_stage2(cfg, corpus, &s1.model);
  CHECK(s2.model.has_stego());
  for (const auto& p : s2.model.flow_parameters()) {
    CAPTURE(p.name);
    CHECK(bit_equal(p.var.value(), before.tensors.at(p.name)));
    CHECK(p.var.requires_grad());
  }
  CHECK(same_tensors(to_checkpoint(s1.model), before));
  CHECK(s2.initial.image == 0.0);
  CHECK(s2.log.size() == cfg.steps);

  cfg.stage = Stage::Joint;
  const auto joint = train_stage2(cfg, corpus, &s1.model);
  bool changed = false;
  for (const auto& p : joint.model.flow_parameters())
    changed = changed || !bit_equal(p.var.value(), before.tensors.at(p.name));
  CHECK(changed);

  CHECK_THROWS_AS(train_stage2(cfg, corpus, nullptr), ConfigError);
  TrainConfig other = cfg;
  other.flow.hidden_width = 4;
  CHECK_THROWS_AS(train_stage2(other, corpus, &s1.model), ConfigError);
}

TEST_CASE("divergent training aborts with the step") {
  TrainConfig cfg = tiny_config();
  cfg.lr = 1e30;
  const auto corpus = synth_corpus(cfg.seed, cfg.synth_images, cfg.image_size());
  try {
    train_stage1(cfg, corpus);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step().has_value());
  }
}
