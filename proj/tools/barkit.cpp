// barkit: one-stage barcode detect-and-read toolkit.
//
// Subcommands: synth, train, eval, infer, bench, analyze, import-voc.
// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 training
// divergence (CLI parse errors use CLI11's own nonzero codes).

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gridread/config.hpp"
#include "gridread/metrics.hpp"
#include "gridread/synth.hpp"
#include "gridread/train.hpp"

namespace fs = std::filesystem;
using namespace gridread;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

struct Common {
  std::string config_path;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = all available cores
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration file");
  cmd->add_option("--seed", c.seed, "master random seed");
  cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg = load_run_config(c.config_path);
  if (c.threads > 0) {
#ifdef _OPENMP
    omp_set_num_threads(c.threads);
#endif
  }
  return cfg;
}

void draw_box(Image& img, const Box& b, bool valid) {
  const std::uint8_t r = valid ? 0 : 255, g = valid ? 200 : 40, bl = 0;
  const int x0 = std::clamp(static_cast<int>(b.x_min() * img.width), 0, img.width - 1);
  const int x1 = std::clamp(static_cast<int>(b.x_max() * img.width), 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(b.y_min() * img.height), 0, img.height - 1);
  const int y1 = std::clamp(static_cast<int>(b.y_max() * img.height), 0, img.height - 1);
  for (int x = x0; x <= x1; ++x) {
    for (int y : {y0, y1}) {
      auto* p = img.at(x, y);
      p[0] = r; p[1] = g; p[2] = bl;
    }
  }
  for (int y = y0; y <= y1; ++y) {
    for (int x : {x0, x1}) {
      auto* p = img.at(x, y);
      p[0] = r; p[1] = g; p[2] = bl;
    }
  }
}

int cmd_synth(const Common& common, const std::string& out_dir, int count_override,
              int max_per_image, const std::string& symbology, int size, const std::string& split) {
  RunConfig cfg = resolve(common);
  if (count_override >= 0) cfg.synth.count = count_override;
  if (max_per_image >= 0) cfg.synth.scene.max_codes = max_per_image;
  if (!symbology.empty()) cfg.synth.symbology = symbology;
  if (size > 0) cfg.synth.scene.width = cfg.synth.scene.height = size;
  if (!split.empty()) cfg.synth.split = split;

  fs::create_directories(out_dir);
  write_resolved_config((fs::path(out_dir) / "resolved_config.json").string(), cfg);
  SynthSummary summary;
  const auto manifest = generate_dataset(cfg.synth, common.seed, out_dir, &summary);
  std::cout << "wrote " << manifest.records.size() << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const Common& common, const std::string& run_dir) {
  RunConfig cfg = resolve(common);
  cfg.train.seed = common.seed;
  if (cfg.data.train_dir.empty()) throw ConfigError("train: data.train_dir is required");
  fs::create_directories(run_dir);
  write_resolved_config((fs::path(run_dir) / "resolved_config.json").string(), cfg);

  const auto train_manifest = read_manifest(cfg.data.train_dir, cfg.data.train_split);
  const auto train_set = PreparedDataset<float>::load(train_manifest, cfg.model);
  PreparedDataset<float> real_set;
  if (!cfg.data.real_dir.empty()) {
    const auto rm = read_manifest(cfg.data.real_dir, cfg.data.real_split);
    real_set = PreparedDataset<float>::load(rm, cfg.model);
  }
  DatasetManifest val_manifest;
  const bool has_val = !cfg.data.val_dir.empty();
  if (has_val) val_manifest = read_manifest(cfg.data.val_dir, cfg.data.val_split);

  Network<float> net(cfg.model, common.seed);
  Trainer<float> trainer(net, cfg.train, run_dir);
  const auto history = trainer.fit(train_set, real_set.images.empty() ? nullptr : &real_set,
                                   has_val ? &val_manifest : nullptr, cfg.decode);
  const auto& last = history.back();
  std::cout << "finished " << history.size() << " epochs; final loss " << last.mean_loss.total();
  if (last.val_map >= 0)
    std::cout << "; val mAP@0.5 " << last.val_map << "; val recognition " << last.val_recognition;
  std::cout << "\n";
  return 0;
}

int cmd_eval(const Common& common, const std::string& model_path, const std::string& data_dir,
             const std::string& split, const std::string& out_path) {
  RunConfig cfg = resolve(common);
  auto net = load_model<float>(model_path);
  const auto manifest = read_manifest(data_dir, split);
  const EvalReport rep = evaluate_model(*net, manifest, cfg.decode);
  std::cout << report_table(rep);
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write report: " + out_path);
    f << nlohmann::json(rep).dump(2) << "\n";
  }
  return 0;
}

int cmd_infer(const Common& common, const std::string& model_path,
              const std::vector<std::string>& images, const std::string& out_path,
              const std::string& overlay_dir) {
  RunConfig cfg = resolve(common);
  auto net = load_model<float>(model_path);
  std::ofstream out;
  if (!out_path.empty()) {
    out.open(out_path);
    if (!out) throw IoError("cannot write detections: " + out_path);
  }
  for (const auto& path : images) {
    Image img = read_png(path);
    const auto dets = infer_tiled(*net, img, cfg.decode);
    for (const auto& d : dets) {
      nlohmann::json j = {{"image", path},
                          {"cx", d.box.cx},
                          {"cy", d.box.cy},
                          {"w", d.box.w},
                          {"h", d.box.h},
                          {"confidence", d.final_confidence},
                          {"sequence", d.sequence},
                          {"status", to_string(d.status)}};
      const std::string line = j.dump();
      std::cout << line << "\n";
      if (out) out << line << "\n";
    }
    if (!overlay_dir.empty()) {
      fs::create_directories(overlay_dir);
      Image vis = img;
      for (const auto& d : dets) draw_box(vis, d.box, d.status == DetectionStatus::valid);
      write_png((fs::path(overlay_dir) / fs::path(path).filename()).string(), vis);
    }
  }
  return 0;
}

int cmd_bench(const Common& common, const std::string& model_path, const std::string& data_dir,
              const std::string& split, int warmup, const std::string& out_path) {
  RunConfig cfg = resolve(common);
  auto net = load_model<float>(model_path);
  const auto manifest = read_manifest(data_dir, split);
  std::vector<Image> images;
  for (const auto& r : manifest.records) images.push_back(read_png(manifest.image_path(r)));
  const LatencyStats st = benchmark_latency(*net, images, cfg.decode, warmup);
  nlohmann::json j = {{"measured", st.measured},
                      {"mean_ms", st.mean_ms},
                      {"median_ms", st.median_ms},
                      {"p95_ms", st.p95_ms},
                      {"fps_mean", st.mean_ms > 0 ? 1000.0 / st.mean_ms : 0.0}};
  std::cout << j.dump(2) << "\n";
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write benchmark: " + out_path);
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_analyze(const Common& common, const std::string& model_path, const std::string& data_dir,
                const std::string& split, const std::string& out_csv, int bins) {
  RunConfig cfg = resolve(common);
  auto net = load_model<float>(model_path);
  const auto manifest = read_manifest(data_dir, split);
  std::vector<EvalDetection> dets;
  std::vector<GroundTruth> gts;
  evaluate_model(*net, manifest, cfg.decode, &dets, &gts);
  // Geometric bin edges from 0.002 to 0.5 plus a catch-all leading bin.
  std::vector<double> edges{0.0};
  const double lo = 0.002, hi = 0.5;
  for (int i = 0; i <= bins; ++i)
    edges.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / bins));
  const auto table = area_ratio_analysis(dets, gts, edges);
  write_area_ratio_csv(out_csv, table);
  std::cout << "wrote " << table.size() << " bins to " << out_csv << "\n";
  return 0;
}

int cmd_import_voc(const std::string& xml_dir, const std::string& image_dir,
                   const std::string& out_dir, const std::string& split,
                   const std::string& spec_id) {
  DatasetManifest m;
  m.root = out_dir;
  m.split = split;
  std::vector<fs::path> xmls;
  for (const auto& e : fs::directory_iterator(xml_dir))
    if (e.path().extension() == ".xml") xmls.push_back(e.path());
  std::sort(xmls.begin(), xmls.end());
  fs::create_directories(fs::path(out_dir) / "images");
  for (const auto& xml : xmls) {
    const std::string stem = xml.stem().string();
    const fs::path src = fs::path(image_dir) / (stem + ".png");
    if (!fs::exists(src)) throw IoError("missing image for annotation: " + src.string());
    SampleRecord r = import_voc_xml(xml.string(), "images/" + stem + ".png", spec_id);
    fs::copy_file(src, fs::path(out_dir) / r.image, fs::copy_options::overwrite_existing);
    check_record(r);
    m.records.push_back(std::move(r));
  }
  write_manifest(m);
  std::cout << "imported " << m.records.size() << " annotated images\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"barkit: train, evaluate and run a one-stage barcode reader"};
  app.require_subcommand(1);

  Common common;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out = "data/synth", synth_symbology, synth_split;
  int synth_count = -1, synth_max_per = -1, synth_size = 0;
  add_common(synth, common);
  synth->add_option("--out", synth_out, "output dataset directory");
  synth->add_option("--count", synth_count, "number of images (overrides config)");
  synth->add_option("--max-per-image", synth_max_per, "maximum codes per image");
  synth->add_option("--symbology", synth_symbology, "ean13 | ean8");
  synth->add_option("--size", synth_size, "square scene size in pixels");
  synth->add_option("--split", synth_split, "split name (train/val/test)");

  // train
  auto* train = app.add_subcommand("train", "train a model from a run configuration");
  std::string run_dir = "runs/default";
  add_common(train, common);
  train->add_option("--run-dir", run_dir, "output directory for checkpoints and metrics");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_model, eval_data, eval_split = "val", eval_out;
  add_common(eval, common);
  eval->add_option("--model", eval_model, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", eval_split, "manifest split name");
  eval->add_option("--out", eval_out, "write the JSON report here");

  // infer
  auto* infer = app.add_subcommand("infer", "run detection + reading on images");
  std::string infer_model, infer_out, infer_overlay;
  std::vector<std::string> infer_images;
  add_common(infer, common);
  infer->add_option("--model", infer_model, "checkpoint path")->required();
  infer->add_option("images", infer_images, "input PNG images")->required();
  infer->add_option("--out", infer_out, "write JSON-lines detections here");
  infer->add_option("--overlay-dir", infer_overlay, "write box-overlay PNGs here");

  // bench
  auto* bench = app.add_subcommand("bench", "measure single-stream batch-1 latency");
  std::string bench_model, bench_data, bench_split = "val", bench_out;
  int bench_warmup = 10;
  add_common(bench, common);
  bench->add_option("--model", bench_model, "checkpoint path")->required();
  bench->add_option("--data", bench_data, "dataset directory")->required();
  bench->add_option("--split", bench_split, "manifest split name");
  bench->add_option("--warmup", bench_warmup, "warm-up iterations excluded from stats");
  bench->add_option("--out", bench_out, "write the JSON stats here");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "area-ratio decodability analysis");
  std::string an_model, an_data, an_split = "val", an_csv = "area_ratio.csv";
  int an_bins = 8;
  add_common(analyze, common);
  analyze->add_option("--model", an_model, "checkpoint path")->required();
  analyze->add_option("--data", an_data, "dataset directory")->required();
  analyze->add_option("--split", an_split, "manifest split name");
  analyze->add_option("--out", an_csv, "output CSV path");
  analyze->add_option("--bins", an_bins, "number of geometric area-ratio bins");

  // import-voc
  auto* imp = app.add_subcommand("import-voc", "convert VOC-style XML annotations");
  std::string imp_xml, imp_img, imp_out, imp_split = "train", imp_spec = "ean13";
  imp->add_option("--xml-dir", imp_xml, "directory of .xml annotation files")->required();
  imp->add_option("--image-dir", imp_img, "directory of matching .png images")->required();
  imp->add_option("--out", imp_out, "output dataset directory")->required();
  imp->add_option("--split", imp_split, "split name");
  imp->add_option("--spec", imp_spec, "sequence profile id (ean13/ean8/generic)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return cmd_synth(common, synth_out, synth_count, synth_max_per, synth_symbology, synth_size,
                       synth_split);
    if (train->parsed()) return cmd_train(common, run_dir);
    if (eval->parsed()) return cmd_eval(common, eval_model, eval_data, eval_split, eval_out);
    if (infer->parsed())
      return cmd_infer(common, infer_model, infer_images, infer_out, infer_overlay);
    if (bench->parsed())
      return cmd_bench(common, bench_model, bench_data, bench_split, bench_warmup, bench_out);
    if (analyze->parsed()) return cmd_analyze(common, an_model, an_data, an_split, an_csv, an_bins);
    if (imp->parsed()) return cmd_import_voc(imp_xml, imp_img, imp_out, imp_split, imp_spec);
  } catch (const TrainDivergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
