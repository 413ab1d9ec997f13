#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gridread/dataset.hpp"

using namespace gridread;
using Catch::Approx;

namespace {
std::filesystem::path tmp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("manifest round trip preserves records") {
  const auto dir = tmp_dir("gr_manifest");
  DatasetManifest m;
  m.root = dir.string();
  m.split = "val";
  SampleRecord r;
  r.image = "images/x.png";
  r.width = 96;
  r.height = 96;
  Annotation a;
  a.box = Box{0.5, 0.25, 0.4, 0.2};
  a.sequence = "96385074";
  a.spec_id = "ean8";
  r.objects.push_back(a);
  m.records.push_back(r);
  write_manifest(m);

  const auto back = read_manifest(dir.string(), "val");
  REQUIRE(back.records.size() == 1);
  CHECK(back.records[0].image == "images/x.png");
  CHECK(back.records[0].objects[0].box.cy == Approx(0.25));
  CHECK(back.records[0].objects[0].sequence == "96385074");
  std::filesystem::remove_all(dir);
}

TEST_CASE("record validation rejects bad boxes and sequences") {
  SampleRecord r;
  r.image = "x.png";
  Annotation a;
  a.box = Box{0.5, 0.5, 0.2, 0.2};
  a.sequence = "96385074";
  a.spec_id = "ean8";
  r.objects.push_back(a);
  check_record(r);  // fine

  r.objects[0].box = Box{0.0, 0.5, 0.2, 0.2};  // leaks out the left edge
  CHECK_THROWS(check_record(r));
  r.objects[0].box = Box{0.5, 0.5, 0.2, 0.2};
  r.objects[0].sequence = "96385075";  // bad check digit
  CHECK_THROWS(check_record(r));
}

TEST_CASE("reading a missing manifest raises an io error") {
  CHECK_THROWS_AS(read_manifest("/nonexistent_dir_gr", "train"), IoError);
}

TEST_CASE("voc-style xml import converts pixel boxes to normalized centers") {
  const auto dir = tmp_dir("gr_voc");
  const auto xml = dir / "sample.xml";
  {
    std::ofstream f(xml);
    f << "<annotation>\n"
         "  <filename>img.png</filename>\n"
         "  <size><width>200</width><height>100</height><depth>3</depth></size>\n"
         "  <object>\n"
         "    <name>barcode</name>\n"
         "    <sequence>96385074</sequence>\n"
         "    <bndbox><xmin>50</xmin><ymin>20</ymin><xmax>150</xmax><ymax>60</ymax></bndbox>\n"
         "  </object>\n"
         "  <object>\n"
         "    <name>barcode</name>\n"
         "    <bndbox><xmin>0</xmin><ymin>0</ymin><xmax>20</xmax><ymax>10</ymax></bndbox>\n"
         "  </object>\n"
         "</annotation>\n";
  }
  const SampleRecord r = import_voc_xml(xml.string(), "img.png", "ean8");
  CHECK(r.width == 200);
  CHECK(r.height == 100);
  REQUIRE(r.objects.size() == 2);
  CHECK(r.objects[0].box.cx == Approx(0.5));   // (50+150)/2 / 200
  CHECK(r.objects[0].box.cy == Approx(0.4));   // (20+60)/2 / 100
  CHECK(r.objects[0].box.w == Approx(0.5));
  CHECK(r.objects[0].box.h == Approx(0.4));
  CHECK(r.objects[0].sequence == "96385074");
  CHECK(r.objects[1].sequence.empty());  // sequence tag optional
  std::filesystem::remove_all(dir);
}
