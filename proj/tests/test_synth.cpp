#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gridread/synth.hpp"

using namespace gridread;
using Catch::Approx;

namespace {

RenderParams flat_params(int mw, int qz, int bar_height = 10) {
  RenderParams p;
  p.module_width = mw;
  p.quiet_zone = qz;
  p.bar_height = bar_height;
  return p;
}

std::filesystem::path tmp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("patch width follows (modules + 2*quiet)*module_width") {
  const auto s13 = encode("5901234123457", Symbology::EAN13);
  CHECK(render_symbol(s13, flat_params(1, 1)).width == 97);  // 95 + 2
  const auto s8 = encode("96385074", Symbology::EAN8);
  CHECK(render_symbol(s8, flat_params(2, 3)).width == 146);  // (67 + 6) * 2
}

TEST_CASE("rendered patch decodes back through the scanline oracle") {
  Rng rng(113);
  for (int trial = 0; trial < 20; ++trial) {
    const Symbology sym = trial % 2 ? Symbology::EAN8 : Symbology::EAN13;
    const SequenceSpec spec = sym == Symbology::EAN8 ? SequenceSpec::ean8()
                                                     : SequenceSpec::ean13();
    const std::string code = random_valid_sequence(spec, rng);
    const Image patch = render_symbol(encode(code, sym), flat_params(3, 2));
    // Threshold the middle scanline by luminance.
    std::vector<std::uint8_t> profile(patch.width);
    const int y = patch.height / 2;
    for (int x = 0; x < patch.width; ++x) {
      const std::uint8_t* p = patch.at(x, y);
      profile[x] = luminance(p[0], p[1], p[2]) < 128 ? 1 : 0;
    }
    const auto r = decode_scanline(profile);
    REQUIRE(r.ok);
    CHECK(r.digits == code);
  }
}

TEST_CASE("render rejects illegal parameters") {
  const auto s = encode("96385074", Symbology::EAN8);
  RenderParams p = flat_params(0, 1);
  CHECK_THROWS(render_symbol(s, p));
  p = flat_params(2, 0);  // quiet zone is mandatory
  CHECK_THROWS(render_symbol(s, p));
  p = flat_params(2, 1);
  p.print_numerals = true;
  CHECK_THROWS(render_symbol(s, p));
  p = flat_params(2, 1);
  p.fg = {200, 200, 200};
  p.bg = {210, 210, 210};  // no contrast
  CHECK_THROWS(render_symbol(s, p));
}

TEST_CASE("identity augmentation is a byte-identical no-op") {
  Rng rng(127);
  Sample s;
  s.image = procedural_background(64, 48, rng);
  Annotation a;
  a.box = Box{0.5, 0.5, 0.4, 0.3};
  a.sequence = "96385074";
  s.annotations.push_back(a);
  const Sample out = augment_sample(s, AugmentConfig::identity(), 999);
  CHECK(out.image.pixels == s.image.pixels);
  CHECK(out.annotations[0].box.cx == a.box.cx);
}

TEST_CASE("horizontal flip mirrors boxes") {
  Rng rng(131);
  Sample s;
  s.image = procedural_background(64, 64, rng);
  Annotation a;
  a.box = Box{0.3, 0.4, 0.2, 0.1};
  a.sequence = "96385074";
  s.annotations.push_back(a);
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.hflip = true;
  // Find a seed whose first Bernoulli draw flips.
  for (std::uint64_t seed = 0;; ++seed) {
    Rng probe(mix_seed(seed, "augment"));
    if (!probe.bernoulli(0.5)) continue;
    const Sample out = augment_sample(s, cfg, seed);
    CHECK(out.annotations[0].box.cx == Approx(1.0 - 0.3));
    CHECK(out.annotations[0].box.cy == Approx(0.4));
    // Pixel mirror: left column of output equals right column of input.
    CHECK(out.image.at(0, 10)[0] == s.image.at(63, 10)[0]);
    break;
  }
}

TEST_CASE("augmentation is deterministic per seed") {
  Rng rng(137);
  Sample s;
  s.image = procedural_background(48, 48, rng);
  Annotation a;
  a.box = Box{0.5, 0.5, 0.3, 0.3};
  a.sequence = "96385074";
  s.annotations.push_back(a);
  AugmentConfig cfg;  // everything enabled
  const Sample o1 = augment_sample(s, cfg, 42);
  const Sample o2 = augment_sample(s, cfg, 42);
  CHECK(o1.image.pixels == o2.image.pixels);
  CHECK(o1.annotations[0].box.cx == o2.annotations[0].box.cx);
  const Sample o3 = augment_sample(s, cfg, 43);
  CHECK(o1.image.pixels != o3.image.pixels);
}

TEST_CASE("composed scenes keep boxes inside the unit square and disjoint") {
  Rng bg_rng(139);
  const Image background = procedural_background(160, 160, bg_rng);
  Rng rng(149);
  AugmentConfig aug;  // full geometric jitter during placement
  SceneConfig scene;
  scene.width = scene.height = 160;
  scene.max_codes = 3;
  scene.min_rel_width = 0.2;
  scene.max_rel_width = 0.5;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<BarcodeSymbol> symbols;
    const int n = static_cast<int>(rng.uniform_int(0, 3));
    for (int i = 0; i < n; ++i)
      symbols.push_back(encode(random_valid_sequence(SequenceSpec::ean8(), rng), Symbology::EAN8));
    const Sample s = compose_scene(background, symbols, 1000 + trial, aug, scene);
    CHECK(static_cast<int>(s.annotations.size()) <= n);
    for (size_t i = 0; i < s.annotations.size(); ++i) {
      CHECK(s.annotations[i].box.inside_unit());
      for (size_t j = i + 1; j < s.annotations.size(); ++j)
        CHECK(iou(s.annotations[i].box, s.annotations[j].box) == 0.0);
    }
  }
}

TEST_CASE("annotation boxes cover the pasted symbol pixels") {
  // Paste a pure-black symbol onto a pure-white background with photometric
  // noise off: any pixel darker than the background must lie inside a box.
  const Image background(120, 120, 255, 255, 255);
  AugmentConfig aug;
  aug.blur = aug.noise = aug.color_jitter = false;
  SceneConfig scene;
  scene.width = scene.height = 120;
  scene.min_rel_width = 0.3;
  scene.max_rel_width = 0.5;
  RenderRanges rr;
  rr.random_colors = false;  // black on white
  for (int trial = 0; trial < 10; ++trial) {
    const auto sym = encode(random_valid_sequence(SequenceSpec::ean8(), 555 + trial),
                            Symbology::EAN8);
    const Sample s = compose_scene(background, {sym}, 2000 + trial, aug, scene, rr);
    if (s.annotations.empty()) continue;  // placement can fail; skip
    const Box& b = s.annotations[0].box;
    for (int y = 0; y < 120; ++y)
      for (int x = 0; x < 120; ++x) {
        const std::uint8_t* p = s.image.at(x, y);
        if (p[0] > 210 && p[1] > 210 && p[2] > 210) continue;  // background
        const double nx = (x + 0.5) / 120.0, ny = (y + 0.5) / 120.0;
        // Half-pixel tolerance on the hull from edge antialiasing.
        const double eps = 1.0 / 120.0;
        CHECK(nx >= b.x_min() - eps);
        CHECK(nx <= b.x_max() + eps);
        CHECK(ny >= b.y_min() - eps);
        CHECK(ny <= b.y_max() + eps);
      }
  }
}

TEST_CASE("crop shift never truncates a box") {
  Rng rng(151);
  Sample s;
  s.image = procedural_background(64, 64, rng);
  Annotation a;
  a.box = Box{0.08, 0.5, 0.15, 0.2};  // close to the left edge
  a.sequence = "96385074";
  s.annotations.push_back(a);
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.crop_shift = true;
  cfg.shift_max = 0.3;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Sample out = augment_sample(s, cfg, seed);
    CHECK(out.annotations[0].box.inside_unit());
  }
}

TEST_CASE("elastic warp inflates boxes by at most the displacement bound") {
  Rng rng(157);
  Sample s;
  s.image = procedural_background(64, 64, rng);
  Annotation a;
  a.box = Box{0.5, 0.5, 0.4, 0.3};
  a.sequence = "96385074";
  s.annotations.push_back(a);
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.elastic = true;
  cfg.elastic_alpha = 2.0;
  const Sample out = augment_sample(s, cfg, 7);
  const Box& b = out.annotations[0].box;
  CHECK(b.x_min() == Approx(a.box.x_min() - 2.0 / 64).margin(1e-9));
  CHECK(b.x_max() == Approx(a.box.x_max() + 2.0 / 64).margin(1e-9));
  CHECK(b.inside_unit());
}

TEST_CASE("dataset generation is deterministic and self-describing") {
  const auto dir1 = tmp_dir("gr_synth1");
  const auto dir2 = tmp_dir("gr_synth2");
  SynthConfig cfg;
  cfg.count = 6;
  cfg.symbology = "ean8";
  cfg.scene.width = cfg.scene.height = 96;
  cfg.scene.min_codes = 0;
  cfg.scene.max_codes = 3;
  cfg.scene.min_rel_width = 0.3;
  cfg.scene.max_rel_width = 0.6;
  cfg.split = "train";
  SynthSummary sum1, sum2;
  const auto m1 = generate_dataset(cfg, 77, dir1.string(), &sum1);
  const auto m2 = generate_dataset(cfg, 77, dir2.string(), &sum2);
  REQUIRE(m1.records.size() == 6);

  // Byte-identical manifests and images for the same seed.
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  };
  CHECK(bytes(dir1 / "train.jsonl") == bytes(dir2 / "train.jsonl"));
  for (const auto& r : m1.records)
    CHECK(bytes(dir1 / r.image) == bytes(dir2 / r.image));

  // Histogram support within the configured code-count range.
  for (const auto& [count, n] : sum1.object_count_hist) {
    CHECK(count >= 0);
    CHECK(count <= 3);
    CHECK(n > 0);
  }
  CHECK(std::filesystem::exists(dir1 / "train_summary.json"));

  // Manifest loads back and every record passes validation.
  const auto loaded = read_manifest(dir1.string(), "train");
  CHECK(loaded.records.size() == 6);
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("zero-count generation writes an empty manifest") {
  const auto dir = tmp_dir("gr_synth0");
  SynthConfig cfg;
  cfg.count = 0;
  const auto m = generate_dataset(cfg, 1, dir.string());
  CHECK(m.records.empty());
  CHECK(std::filesystem::exists(dir / "train.jsonl"));
  std::filesystem::remove_all(dir);
}
