#pragma once

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "gridread/ean.hpp"
#include "gridread/geometry.hpp"
#include "gridread/image.hpp"
#include "gridread/png_io.hpp"

namespace gridread {

struct Annotation {
  Box box;  // normalized center format
  std::string sequence;
  std::string spec_id = "ean13";
};

struct SampleRecord {
  std::string image;  // path relative to the manifest root
  int width = 0;
  int height = 0;
  std::vector<Annotation> objects;
};

// An image plus its ground-truth objects.
struct Sample {
  Image image;
  std::vector<Annotation> annotations;
};

inline void to_json(nlohmann::json& j, const Annotation& a) {
  j = {{"cx", a.box.cx}, {"cy", a.box.cy}, {"w", a.box.w}, {"h", a.box.h},
       {"sequence", a.sequence}, {"spec", a.spec_id}};
}

inline void from_json(const nlohmann::json& j, Annotation& a) {
  j.at("cx").get_to(a.box.cx);
  j.at("cy").get_to(a.box.cy);
  j.at("w").get_to(a.box.w);
  j.at("h").get_to(a.box.h);
  j.at("sequence").get_to(a.sequence);
  j.at("spec").get_to(a.spec_id);
}

inline void to_json(nlohmann::json& j, const SampleRecord& r) {
  j = {{"image", r.image}, {"width", r.width}, {"height", r.height}, {"objects", r.objects}};
}

inline void from_json(const nlohmann::json& j, SampleRecord& r) {
  j.at("image").get_to(r.image);
  j.at("width").get_to(r.width);
  j.at("height").get_to(r.height);
  j.at("objects").get_to(r.objects);
}

struct DatasetManifest {
  std::string root;  // directory containing the manifest and images
  std::string split = "train";
  std::vector<SampleRecord> records;

  std::string image_path(const SampleRecord& r) const {
    return (std::filesystem::path(root) / r.image).string();
  }
};

inline SequenceSpec spec_from_id(const std::string& id) {
  if (id == "ean13") return SequenceSpec::ean13();
  if (id == "ean8") return SequenceSpec::ean8();
  // GENERIC profiles carry alphabet/length in the run config, not the manifest;
  // the permissive default accepts any digit string.
  return SequenceSpec::generic(10, 64, false, false, false);
}

inline void check_record(const SampleRecord& r) {
  for (const auto& a : r.objects) {
    if (!a.box.inside_unit())
      throw std::invalid_argument("annotation box outside [0,1]^2 in " + r.image);
    if (a.spec_id != "generic" && !validate(a.sequence, spec_from_id(a.spec_id)))
      throw std::invalid_argument("invalid sequence '" + a.sequence + "' in " + r.image);
  }
}

inline void write_manifest(const DatasetManifest& m) {
  std::filesystem::create_directories(m.root);
  const auto path = std::filesystem::path(m.root) / (m.split + ".jsonl");
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest: " + path.string());
  for (const auto& r : m.records) f << nlohmann::json(r).dump() << "\n";
  if (!f) throw IoError("manifest write failed: " + path.string());
}

inline DatasetManifest read_manifest(const std::string& root, const std::string& split,
                                     bool validate_records = true) {
  DatasetManifest m;
  m.root = root;
  m.split = split;
  const auto path = std::filesystem::path(root) / (split + ".jsonl");
  std::ifstream f(path);
  if (!f) throw IoError("cannot read manifest: " + path.string());
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    SampleRecord r = nlohmann::json::parse(line).get<SampleRecord>();
    if (validate_records) check_record(r);
    m.records.push_back(std::move(r));
  }
  return m;
}

inline Sample load_sample(const DatasetManifest& m, const SampleRecord& r) {
  Sample s;
  s.image = read_png(m.image_path(r));
  s.annotations = r.objects;
  return s;
}

// ---------------------------------------------------------------------------
// VOC-style XML import. Accepts the minimal annotation shape
//   <annotation><size><width/><height/></size>
//     <object><name>..</name><sequence>..</sequence>
//       <bndbox><xmin/><ymin/><xmax/><ymax/></bndbox></object>...
// with pixel-coordinate boxes; <sequence> may be absent (empty sequence).
// ---------------------------------------------------------------------------

namespace detail {

inline std::string xml_tag(const std::string& xml, const std::string& tag, size_t from,
                           size_t* end_out = nullptr) {
  const std::string open = "<" + tag + ">";
  const std::string close = "</" + tag + ">";
  const size_t a = xml.find(open, from);
  if (a == std::string::npos) return {};
  const size_t b = xml.find(close, a);
  if (b == std::string::npos) return {};
  if (end_out) *end_out = b + close.size();
  std::string s = xml.substr(a + open.size(), b - a - open.size());
  const size_t l = s.find_first_not_of(" \t\r\n");
  const size_t r = s.find_last_not_of(" \t\r\n");
  return l == std::string::npos ? std::string() : s.substr(l, r - l + 1);
}

}  // namespace detail

inline SampleRecord import_voc_xml(const std::string& xml_path, const std::string& image_rel,
                                   const std::string& spec_id = "ean13") {
  std::ifstream f(xml_path);
  if (!f) throw IoError("cannot read xml: " + xml_path);
  std::string xml((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  SampleRecord r;
  r.image = image_rel;
  r.width = std::stoi(detail::xml_tag(xml, "width", 0));
  r.height = std::stoi(detail::xml_tag(xml, "height", 0));
  size_t pos = 0;
  while (true) {
    const size_t obj_at = xml.find("<object>", pos);
    if (obj_at == std::string::npos) break;
    size_t obj_end = xml.find("</object>", obj_at);
    if (obj_end == std::string::npos) break;
    const std::string obj = xml.substr(obj_at, obj_end - obj_at);
    Annotation a;
    a.spec_id = spec_id;
    a.sequence = detail::xml_tag(obj, "sequence", 0);
    const double x0 = std::stod(detail::xml_tag(obj, "xmin", 0));
    const double y0 = std::stod(detail::xml_tag(obj, "ymin", 0));
    const double x1 = std::stod(detail::xml_tag(obj, "xmax", 0));
    const double y1 = std::stod(detail::xml_tag(obj, "ymax", 0));
    a.box = Box::from_corners(x0 / r.width, y0 / r.height, x1 / r.width, y1 / r.height);
    r.objects.push_back(std::move(a));
    pos = obj_end + 9;
  }
  return r;
}

}  // namespace gridread
