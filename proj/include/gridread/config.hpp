#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "gridread/decode.hpp"
#include "gridread/net.hpp"
#include "gridread/synth.hpp"
#include "gridread/train.hpp"

namespace gridread {

// One file that pins everything a run needs: model shape, training schedule,
// decoding thresholds, synthesis knobs and data locations. Unknown keys are
// rejected so typos fail loudly instead of silently using defaults.

struct DataConfig {
  std::string train_dir, train_split = "train";
  std::string real_dir, real_split = "train";
  std::string val_dir, val_split = "val";
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  SynthConfig synth;
  DataConfig data;

  void validate_config() const {
    model.validate_config();
    train.validate_config();
    decode.validate_config();
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& section) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key))
      throw ConfigError("unknown config key '" + section + "." + key + "'");
  }
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const DataConfig& d) {
  j = {{"train_dir", d.train_dir},   {"train_split", d.train_split},
       {"real_dir", d.real_dir},     {"real_split", d.real_split},
       {"val_dir", d.val_dir},       {"val_split", d.val_split}};
}

inline void from_json(const nlohmann::json& j, DataConfig& d) {
  detail::reject_unknown_keys(
      j, {"train_dir", "train_split", "real_dir", "real_split", "val_dir", "val_split"}, "data");
  if (j.contains("train_dir")) j.at("train_dir").get_to(d.train_dir);
  if (j.contains("train_split")) j.at("train_split").get_to(d.train_split);
  if (j.contains("real_dir")) j.at("real_dir").get_to(d.real_dir);
  if (j.contains("real_split")) j.at("real_split").get_to(d.real_split);
  if (j.contains("val_dir")) j.at("val_dir").get_to(d.val_dir);
  if (j.contains("val_split")) j.at("val_split").get_to(d.val_split);
}

inline void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = {{"confidence_threshold", c.confidence_threshold},
       {"nms_iou_threshold", c.nms_iou_threshold},
       {"tile_size", c.tile_size},
       {"tile_stride", c.tile_stride}};
}

inline void from_json(const nlohmann::json& j, DecodeConfig& c) {
  detail::reject_unknown_keys(
      j, {"confidence_threshold", "nms_iou_threshold", "tile_size", "tile_stride"}, "decode");
  if (j.contains("confidence_threshold"))
    j.at("confidence_threshold").get_to(c.confidence_threshold);
  if (j.contains("nms_iou_threshold")) j.at("nms_iou_threshold").get_to(c.nms_iou_threshold);
  if (j.contains("tile_size")) j.at("tile_size").get_to(c.tile_size);
  if (j.contains("tile_stride")) j.at("tile_stride").get_to(c.tile_stride);
}

inline void to_json(nlohmann::json& j, const AugmentConfig& a) {
  j = {{"rotate", a.rotate},
       {"rotate_max_deg", a.rotate_max_deg},
       {"shear", a.shear},
       {"shear_max", a.shear_max},
       {"stretch", a.stretch},
       {"stretch_min", a.stretch_min},
       {"stretch_max", a.stretch_max},
       {"perspective", a.perspective},
       {"perspective_jitter", a.perspective_jitter},
       {"elastic", a.elastic},
       {"elastic_alpha", a.elastic_alpha},
       {"elastic_sigma", a.elastic_sigma},
       {"blur", a.blur},
       {"blur_sigma_max", a.blur_sigma_max},
       {"noise", a.noise},
       {"noise_sigma_max", a.noise_sigma_max},
       {"color_jitter", a.color_jitter},
       {"brightness_max", a.brightness_max},
       {"saturation_max", a.saturation_max},
       {"hue_max_deg", a.hue_max_deg},
       {"hflip", a.hflip},
       {"crop_shift", a.crop_shift},
       {"shift_max", a.shift_max},
       {"whole_image_rotate", a.whole_image_rotate},
       {"whole_image_rotate_max_deg", a.whole_image_rotate_max_deg}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& a) {
  detail::reject_unknown_keys(
      j,
      {"rotate",          "rotate_max_deg",  "shear",        "shear_max",
       "stretch",         "stretch_min",     "stretch_max",  "perspective",
       "perspective_jitter", "elastic",      "elastic_alpha", "elastic_sigma",
       "blur",            "blur_sigma_max",  "noise",        "noise_sigma_max",
       "color_jitter",    "brightness_max",  "saturation_max", "hue_max_deg",
       "hflip",           "crop_shift",      "shift_max",    "whole_image_rotate",
       "whole_image_rotate_max_deg"},
      "augment");
  auto opt = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  opt("rotate", a.rotate);
  opt("rotate_max_deg", a.rotate_max_deg);
  opt("shear", a.shear);
  opt("shear_max", a.shear_max);
  opt("stretch", a.stretch);
  opt("stretch_min", a.stretch_min);
  opt("stretch_max", a.stretch_max);
  opt("perspective", a.perspective);
  opt("perspective_jitter", a.perspective_jitter);
  opt("elastic", a.elastic);
  opt("elastic_alpha", a.elastic_alpha);
  opt("elastic_sigma", a.elastic_sigma);
  opt("blur", a.blur);
  opt("blur_sigma_max", a.blur_sigma_max);
  opt("noise", a.noise);
  opt("noise_sigma_max", a.noise_sigma_max);
  opt("color_jitter", a.color_jitter);
  opt("brightness_max", a.brightness_max);
  opt("saturation_max", a.saturation_max);
  opt("hue_max_deg", a.hue_max_deg);
  opt("hflip", a.hflip);
  opt("crop_shift", a.crop_shift);
  opt("shift_max", a.shift_max);
  opt("whole_image_rotate", a.whole_image_rotate);
  opt("whole_image_rotate_max_deg", a.whole_image_rotate_max_deg);
}

inline void to_json(nlohmann::json& j, const SceneConfig& s) {
  j = {{"width", s.width},
       {"height", s.height},
       {"min_codes", s.min_codes},
       {"max_codes", s.max_codes},
       {"min_rel_width", s.min_rel_width},
       {"max_rel_width", s.max_rel_width},
       {"max_place_attempts", s.max_place_attempts}};
}

inline void from_json(const nlohmann::json& j, SceneConfig& s) {
  detail::reject_unknown_keys(j,
                              {"width", "height", "min_codes", "max_codes", "min_rel_width",
                               "max_rel_width", "max_place_attempts"},
                              "scene");
  auto opt = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  opt("width", s.width);
  opt("height", s.height);
  opt("min_codes", s.min_codes);
  opt("max_codes", s.max_codes);
  opt("min_rel_width", s.min_rel_width);
  opt("max_rel_width", s.max_rel_width);
  opt("max_place_attempts", s.max_place_attempts);
}

inline void to_json(nlohmann::json& j, const RenderRanges& r) {
  j = {{"bar_height_min", r.bar_height_min},
       {"bar_height_max", r.bar_height_max},
       {"module_width_min", r.module_width_min},
       {"module_width_max", r.module_width_max},
       {"quiet_zone_min", r.quiet_zone_min},
       {"quiet_zone_max", r.quiet_zone_max},
       {"random_colors", r.random_colors},
       {"min_luminance_gap", r.min_luminance_gap}};
}

inline void from_json(const nlohmann::json& j, RenderRanges& r) {
  detail::reject_unknown_keys(j,
                              {"bar_height_min", "bar_height_max", "module_width_min",
                               "module_width_max", "quiet_zone_min", "quiet_zone_max",
                               "random_colors", "min_luminance_gap"},
                              "render");
  auto opt = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  opt("bar_height_min", r.bar_height_min);
  opt("bar_height_max", r.bar_height_max);
  opt("module_width_min", r.module_width_min);
  opt("module_width_max", r.module_width_max);
  opt("quiet_zone_min", r.quiet_zone_min);
  opt("quiet_zone_max", r.quiet_zone_max);
  opt("random_colors", r.random_colors);
  opt("min_luminance_gap", r.min_luminance_gap);
}

inline void to_json(nlohmann::json& j, const SynthConfig& s) {
  j = {{"count", s.count},
       {"symbology", s.symbology},
       {"scene", s.scene},
       {"render", s.render},
       {"augment", s.augment},
       {"background_dir", s.background_dir},
       {"split", s.split}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& s) {
  detail::reject_unknown_keys(
      j, {"count", "symbology", "scene", "render", "augment", "background_dir", "split"}, "synth");
  auto opt = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  opt("count", s.count);
  opt("symbology", s.symbology);
  opt("scene", s.scene);
  opt("render", s.render);
  opt("augment", s.augment);
  opt("background_dir", s.background_dir);
  opt("split", s.split);
}

// Strict ModelConfig parsing lives here rather than beside the permissive
// serialization so checkpoints written by older revisions keep loading.
inline ModelConfig model_config_from_json_strict(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"input_size", "grid", "boxes", "backbone", "base_channels",
                               "neck_blocks", "neck_channels", "spec"},
                              "model");
  ModelConfig c;
  auto opt = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  opt("input_size", c.input_size);
  opt("grid", c.grid);
  opt("boxes", c.boxes);
  opt("backbone", c.backbone);
  opt("base_channels", c.base_channels);
  opt("neck_blocks", c.neck_blocks);
  opt("neck_channels", c.neck_channels);
  if (j.contains("spec")) {
    const auto& s = j.at("spec");
    detail::reject_unknown_keys(s,
                                {"id", "alphabet_size", "max_length", "fixed_length",
                                 "has_na_class", "has_length_head"},
                                "model.spec");
    const std::string id = s.value("id", "ean13");
    if (id == "ean13") c.spec = SequenceSpec::ean13();
    else if (id == "ean8") c.spec = SequenceSpec::ean8();
    else c.spec = SequenceSpec::generic(10, 13, false, true, true);
    c.spec.id = symbology_from_string(id);
    auto sopt = [&](const char* key, auto& dst) {
      if (s.contains(key)) s.at(key).get_to(dst);
    };
    sopt("alphabet_size", c.spec.alphabet_size);
    sopt("max_length", c.spec.max_length);
    sopt("fixed_length", c.spec.fixed_length);
    sopt("has_na_class", c.spec.has_na_class);
    sopt("has_length_head", c.spec.has_length_head);
  }
  return c;
}

inline void to_json(nlohmann::json& j, const RunConfig& r) {
  j = {{"model", r.model},
       {"train", r.train},
       {"decode", r.decode},
       {"synth", r.synth},
       {"data", r.data}};
}

inline void from_json(const nlohmann::json& j, RunConfig& r) {
  detail::reject_unknown_keys(j, {"model", "train", "decode", "synth", "data"}, "run");
  if (j.contains("model")) r.model = model_config_from_json_strict(j.at("model"));
  if (j.contains("train")) {
    detail::reject_unknown_keys(j.at("train"),
                                {"epochs", "batch_size", "lr", "momentum", "weight_decay",
                                 "lr_decay_at", "lr_decay_factor", "lambda_class_initial",
                                 "lambda_class_final", "lambda_class_switch", "lambda_coord",
                                 "lambda_noobj", "real_fraction", "seed", "eval_every",
                                 "divergence_loss"},
                                "train");
    j.at("train").get_to(r.train);
  }
  if (j.contains("decode")) j.at("decode").get_to(r.decode);
  if (j.contains("synth")) j.at("synth").get_to(r.synth);
  if (j.contains("data")) j.at("data").get_to(r.data);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  RunConfig r = j.get<RunConfig>();
  r.validate_config();
  return r;
}

// Echo the fully resolved configuration (defaults + file + overrides) so a
// run directory is self-describing.
inline void write_resolved_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write resolved config: " + path);
  f << nlohmann::json(cfg).dump(2) << "\n";
}

}  // namespace gridread
