#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <string>
#include <vector>

#include "gridread/dataset.hpp"
#include "gridread/decode.hpp"
#include "gridread/metrics.hpp"
#include "gridread/net.hpp"
#include "gridread/rng.hpp"
#include "gridread/target.hpp"

namespace gridread {

struct TrainDivergence : std::runtime_error {
  explicit TrainDivergence(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<double> lr_decay_at = {0.6, 0.85};  // fractions of total epochs
  double lr_decay_factor = 0.1;
  // Class-term weight schedule: start low so localisation stabilises first,
  // then raise it for the recognition phase.
  double lambda_class_initial = 1.0;
  double lambda_class_final = 5.0;
  double lambda_class_switch = 0.5;  // fraction of epochs at which to switch
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;
  double real_fraction = 0.5;  // chance a batch slot draws from the real set
  std::uint64_t seed = 1;
  int eval_every = 0;  // validate every N epochs (0 = final epoch only)
  double divergence_loss = 1e6;

  void validate_config() const {
    if (epochs < 1 || batch_size < 2)
      throw ConfigError("epochs must be >= 1 and batch_size >= 2 (batch statistics)");
    if (lr <= 0 || lr_decay_factor <= 0 || lr_decay_factor > 1)
      throw ConfigError("bad learning-rate configuration");
    if (lambda_class_switch < 0 || lambda_class_switch > 1 || real_fraction < 0 ||
        real_fraction > 1)
      throw ConfigError("schedule fractions must lie in [0,1]");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"lr_decay_at", c.lr_decay_at},
       {"lr_decay_factor", c.lr_decay_factor},
       {"lambda_class_initial", c.lambda_class_initial},
       {"lambda_class_final", c.lambda_class_final},
       {"lambda_class_switch", c.lambda_class_switch},
       {"lambda_coord", c.lambda_coord},
       {"lambda_noobj", c.lambda_noobj},
       {"real_fraction", c.real_fraction},
       {"seed", c.seed},
       {"eval_every", c.eval_every},
       {"divergence_loss", c.divergence_loss}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("momentum")) j.at("momentum").get_to(c.momentum);
  if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
  if (j.contains("lr_decay_at")) j.at("lr_decay_at").get_to(c.lr_decay_at);
  if (j.contains("lr_decay_factor")) j.at("lr_decay_factor").get_to(c.lr_decay_factor);
  if (j.contains("lambda_class_initial")) j.at("lambda_class_initial").get_to(c.lambda_class_initial);
  if (j.contains("lambda_class_final")) j.at("lambda_class_final").get_to(c.lambda_class_final);
  if (j.contains("lambda_class_switch")) j.at("lambda_class_switch").get_to(c.lambda_class_switch);
  if (j.contains("lambda_coord")) j.at("lambda_coord").get_to(c.lambda_coord);
  if (j.contains("lambda_noobj")) j.at("lambda_noobj").get_to(c.lambda_noobj);
  if (j.contains("real_fraction")) j.at("real_fraction").get_to(c.real_fraction);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("eval_every")) j.at("eval_every").get_to(c.eval_every);
  if (j.contains("divergence_loss")) j.at("divergence_loss").get_to(c.divergence_loss);
}

// Effective hyperparameters at a given epoch (0-based).
inline double lr_at_epoch(const TrainConfig& c, int epoch) {
  double lr = c.lr;
  for (double frac : c.lr_decay_at)
    if (epoch >= static_cast<int>(frac * c.epochs)) lr *= c.lr_decay_factor;
  return lr;
}

inline double lambda_class_at_epoch(const TrainConfig& c, int epoch) {
  return epoch >= static_cast<int>(c.lambda_class_switch * c.epochs) ? c.lambda_class_final
                                                                     : c.lambda_class_initial;
}

// ---------------------------------------------------------------------------
// Dataset evaluation: full tiled inference per image, then detection and
// recognition metrics against the manifest ground truth.
// ---------------------------------------------------------------------------

template <typename T>
EvalReport evaluate_model(Network<T>& net, const DatasetManifest& manifest, const DecodeConfig& dc,
                          std::vector<EvalDetection>* out_dets = nullptr,
                          std::vector<GroundTruth>* out_gts = nullptr) {
  std::vector<EvalDetection> dets;
  std::vector<GroundTruth> gts;
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    const Sample s = load_sample(manifest, manifest.records[i]);
    for (const auto& a : s.annotations)
      gts.push_back({static_cast<int>(i), a.box, a.sequence});
    for (const auto& d : infer_tiled(net, s.image, dc)) {
      dets.push_back({static_cast<int>(i), d.box, d.final_confidence, d.sequence,
                      d.status == DetectionStatus::valid});
    }
  }
  EvalReport rep;
  rep.images = static_cast<int>(manifest.records.size());
  rep.ground_truths = static_cast<int>(gts.size());
  rep.detections = static_cast<int>(dets.size());
  rep.map50 = average_precision(dets, gts, 0.5);
  rep.recognition = recognition_rate(dets, gts, 0.5);
  net.count_params_flops(rep.param_count, rep.mac_count);
  rep.precision = sizeof(T) == 4 ? "f32" : "f64";
  if (out_dets) *out_dets = std::move(dets);
  if (out_gts) *out_gts = std::move(gts);
  return rep;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  int steps = 0;
  double lr = 0, lambda_class = 0;
  LossBreakdown mean_loss;
  double val_map = -1, val_recognition = -1;
};

inline void to_json(nlohmann::json& j, const EpochLog& e) {
  j = {{"epoch", e.epoch},
       {"steps", e.steps},
       {"lr", e.lr},
       {"lambda_class", e.lambda_class},
       {"loss", {{"xy", e.mean_loss.xy},
                 {"wh", e.mean_loss.wh},
                 {"obj", e.mean_loss.obj},
                 {"noobj", e.mean_loss.noobj},
                 {"cls", e.mean_loss.cls},
                 {"total", e.mean_loss.total()}}},
       {"val_map", e.val_map},
       {"val_recognition", e.val_recognition}};
}

// In-memory training set: images pre-decoded to tensors once, targets encoded
// per the model grid. Scenes must match the model input size (training does
// not tile).
template <typename T>
struct PreparedDataset {
  std::vector<Tensor<T>> images;
  std::vector<GridTarget> targets;

  static PreparedDataset load(const DatasetManifest& m, const ModelConfig& cfg) {
    PreparedDataset d;
    for (const auto& r : m.records) {
      const Sample s = load_sample(m, r);
      if (s.image.width != cfg.input_size || s.image.height != cfg.input_size)
        throw ConfigError("training image " + r.image + " is not input-sized; tile or resize");
      d.images.push_back(image_to_tensor<T>(s.image));
      d.targets.push_back(encode_targets(s.annotations, cfg));
    }
    return d;
  }
};

template <typename T>
class Trainer {
 public:
  Trainer(Network<T>& net, TrainConfig cfg, std::string run_dir)
      : net_(net), cfg_(std::move(cfg)), run_dir_(std::move(run_dir)) {
    cfg_.validate_config();
    std::filesystem::create_directories(run_dir_);
    params_ = net_.params();
    for (auto& p : params_)
      if (p.trainable) velocity_[p.name].assign(p.tensor->data.size(), T(0));
  }

  // Trains on `synth` (plus an optional `real` pool mixed in by
  // cfg.real_fraction), validating on `val` when given. Throws
  // TrainDivergence on NaN or runaway loss; the last finite-epoch
  // checkpoint stays on disk.
  std::vector<EpochLog> fit(const PreparedDataset<T>& synth, const PreparedDataset<T>* real,
                            const DatasetManifest* val, const DecodeConfig& dc) {
    if (synth.images.empty()) throw ConfigError("empty training set");
    if (real && real->images.empty()) real = nullptr;
    std::ofstream log(std::filesystem::path(run_dir_) / "metrics.jsonl");
    std::vector<EpochLog> history;

    const int n = static_cast<int>(synth.images.size());
    const int steps_per_epoch = std::max(1, n / cfg_.batch_size);

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      Rng rng(mix_seed(cfg_.seed, "epoch" + std::to_string(epoch)));
      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      // Fisher-Yates with the pinned RNG so batch composition is reproducible.
      for (int i = n - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<int>(rng.uniform_int(0, i))]);

      const double lr = lr_at_epoch(cfg_, epoch);
      LossConfig lc{cfg_.lambda_coord, cfg_.lambda_noobj, lambda_class_at_epoch(cfg_, epoch)};

      LossBreakdown epoch_sum;
      int cursor = 0;
      for (int step = 0; step < steps_per_epoch; ++step) {
        // Assemble the batch: synthetic by shuffled order, with optional
        // real-sample substitution per slot.
        std::vector<const Tensor<T>*> batch_imgs;
        std::vector<GridTarget> batch_tgts;
        for (int b = 0; b < cfg_.batch_size; ++b) {
          if (real && rng.bernoulli(cfg_.real_fraction)) {
            const int idx = static_cast<int>(rng.uniform_int(0, real->images.size() - 1));
            batch_imgs.push_back(&real->images[idx]);
            batch_tgts.push_back(real->targets[idx]);
          } else {
            const int idx = order[cursor++ % n];
            batch_imgs.push_back(&synth.images[idx]);
            batch_tgts.push_back(synth.targets[idx]);
          }
        }
        Tensor<T> x({cfg_.batch_size, 3, net_.config().input_size, net_.config().input_size});
        const size_t per = batch_imgs[0]->data.size();
        for (int b = 0; b < cfg_.batch_size; ++b)
          std::copy(batch_imgs[b]->data.begin(), batch_imgs[b]->data.end(),
                    x.data.begin() + static_cast<std::ptrdiff_t>(b) * per);

        net_.zero_grad();
        Tensor<T> out = net_.forward(x, true);
        Tensor<T> grad;
        LossBreakdown loss;
        try {
          loss = detection_loss(out, batch_tgts, net_.config(), lc, &grad);
        } catch (const NumericError& e) {
          throw TrainDivergence(std::string("training diverged (") + e.what() +
                                "); last finite checkpoint kept");
        }
        if (!std::isfinite(loss.total()) || loss.total() > cfg_.divergence_loss)
          throw TrainDivergence("training diverged: loss " + std::to_string(loss.total()) +
                                "; last finite checkpoint kept");
        net_.backward(grad);
        for (auto& p : params_)
          if (p.trainable)
            sgd_step(*p.tensor, velocity_[p.name], static_cast<T>(lr),
                     static_cast<T>(cfg_.momentum), static_cast<T>(cfg_.weight_decay));

        epoch_sum.xy += loss.xy;
        epoch_sum.wh += loss.wh;
        epoch_sum.obj += loss.obj;
        epoch_sum.noobj += loss.noobj;
        epoch_sum.cls += loss.cls;
      }

      EpochLog el;
      el.epoch = epoch;
      el.steps = steps_per_epoch;
      el.lr = lr;
      el.lambda_class = lc.lambda_class;
      el.mean_loss = {epoch_sum.xy / steps_per_epoch, epoch_sum.wh / steps_per_epoch,
                      epoch_sum.obj / steps_per_epoch, epoch_sum.noobj / steps_per_epoch,
                      epoch_sum.cls / steps_per_epoch};

      save_checkpoint((std::filesystem::path(run_dir_) / "last.ckpt").string(), net_);
      const bool do_eval =
          val && (epoch == cfg_.epochs - 1 ||
                  (cfg_.eval_every > 0 && (epoch + 1) % cfg_.eval_every == 0));
      if (do_eval) {
        const EvalReport rep = evaluate_model(net_, *val, dc);
        el.val_map = rep.map50;
        el.val_recognition = rep.recognition;
        if (rep.map50 >= best_val_map_) {
          best_val_map_ = rep.map50;
          save_checkpoint((std::filesystem::path(run_dir_) / "best.ckpt").string(), net_);
        }
      }
      log << nlohmann::json(el).dump() << "\n";
      log.flush();
      history.push_back(el);
    }
    return history;
  }

 private:
  Network<T>& net_;
  TrainConfig cfg_;
  std::string run_dir_;
  std::vector<NamedParam<T>> params_;
  std::map<std::string, std::vector<T>> velocity_;
  double best_val_map_ = -1;
};

}  // namespace gridread
