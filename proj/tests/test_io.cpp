#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "hdrnerf/dataset.hpp"
#include "hdrnerf/image_io.hpp"
#include "hdrnerf/synth.hpp"

using namespace hdrnerf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hdrnerf_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DatasetBundle tiny_dataset() {
  SceneSpec s = default_scene();
  s.rig.width = s.rig.height = 6;
  s.n_poses = 3;
  s.gt_samples = 32;
  return make_dataset(s, 11);
}

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Pfm, RoundTripIsExactForFloats) {
  Image img(2, 2);
  const double values[] = {0.0, 0.5, 1.0, 2.0};
  for (int p = 0; p < 4; ++p) {
    for (int c = 0; c < 3; ++c) img.data[3 * p + c] = values[p] * (c + 1);
  }
  EXPECT_EQ(decode_pfm(encode_pfm(img)), img);
  const fs::path dir = scratch("pfm");
  write_pfm(dir / "a.pfm", img);
  EXPECT_EQ(read_pfm(dir / "a.pfm"), img);
}

TEST(Pfm, BottomRowFirstOnDisk) {
  Image img(1, 2);
  img.at(0, 0, 0) = 7.0;  // top row
  const std::string bytes = encode_pfm(img);
  float first;
  std::memcpy(&first, bytes.data() + bytes.size() - 6 * 4, 4);
  EXPECT_EQ(first, 0.0f);
  std::memcpy(&first, bytes.data() + bytes.size() - 3 * 4, 4);
  EXPECT_EQ(first, 7.0f);
}

TEST(Pfm, RejectsMalformedHeaders) {
  const std::string payload(2 * 2 * 3 * 4, '\0');
  EXPECT_NO_THROW(decode_pfm("PF\n2 2\n-1.0\n" + payload));
  EXPECT_THROW(decode_pfm("PF\n2 2\n+1.0\n" + payload), FormatError);
  EXPECT_THROW(decode_pfm("Pf\n2 2\n-1.0\n" + payload), FormatError);
  EXPECT_THROW(decode_pfm("PF\n2 2\nabc\n" + payload), FormatError);
  EXPECT_THROW(decode_pfm("PF\n2 2\n-1.0\n" + payload.substr(4)), FormatError);
  EXPECT_THROW(decode_pfm("PF\n0 2\n-1.0\n"), FormatError);
}

TEST(Png, FullCodeReadsAsOne) {
  const fs::path dir = scratch("png");
  write_png(dir / "w.png", Image(3, 2, 1.0));
  const Image back = read_png(dir / "w.png");
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.height, 2);
  for (double v : back.data) EXPECT_EQ(v, 1.0);
}

TEST(Png, QuantizesToNearestCode) {
  const fs::path dir = scratch("pngq");
  Image img(2, 1);
  img.data = {0.0, 0.5, 1.0, 100.0 / 255, 0.3, -0.2};
  write_png(dir / "q.png", img);
  const Image back = read_png(dir / "q.png");
  EXPECT_EQ(back.data[0], 0.0);
  EXPECT_EQ(back.data[1], 128.0 / 255);
  EXPECT_EQ(back.data[3], 100.0 / 255);
  EXPECT_EQ(back.data[5], 0.0);
  EXPECT_THROW(read_png(dir / "missing.png"), InputError);
}

TEST(Dataset, RoundTrip) {
  const DatasetBundle d = tiny_dataset();
  const fs::path dir = scratch("ds");
  write_dataset(dir, d);
  const DatasetBundle e = load_dataset(dir);
  EXPECT_EQ(dataset_meta(d).dump(), dataset_meta(e).dump());
  ASSERT_EQ(d.views.size(), e.views.size());
  for (std::size_t i = 0; i < d.views.size(); ++i) {
    EXPECT_EQ(d.views[i].pose_index, e.views[i].pose_index);
    // PNG stores the exact codes the synthesizer produced.
    EXPECT_EQ(d.views[i].image, e.views[i].image) << d.views[i].file;
    ASSERT_EQ(d.views[i].hdr.has_value(), e.views[i].hdr.has_value());
    if (d.views[i].hdr) {
      for (std::size_t k = 0; k < d.views[i].hdr->data.size(); ++k) {
        EXPECT_EQ(e.views[i].hdr->data[k], static_cast<double>(static_cast<float>(d.views[i].hdr->data[k])));
      }
    }
  }
}

TEST(Dataset, ZeroExposureNamesTheView) {
  const DatasetBundle d = tiny_dataset();
  const fs::path dir = scratch("dt0");
  write_dataset(dir, d);
  auto meta = dataset_meta(d);
  meta["views"][1]["exposure_time_s"] = 0.0;
  write_file_atomic(dir / "meta.json", meta.dump());
  const std::string msg = message_of([&] { load_dataset(dir); });
  EXPECT_NE(msg.find("view 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find(d.views[1].file), std::string::npos) << msg;
}

TEST(Dataset, MissingImageNamesThePath) {
  const DatasetBundle d = tiny_dataset();
  const fs::path dir = scratch("missing");
  write_dataset(dir, d);
  fs::remove(dir / d.views[2].file);
  const std::string msg = message_of([&] { load_dataset(dir); });
  EXPECT_NE(msg.find((dir / d.views[2].file).string()), std::string::npos) << msg;
  EXPECT_NE(message_of([&] { load_dataset(dir / "nope"); }).find("meta.json"), std::string::npos);
}

TEST(Dataset, SchemaViolations) {
  const DatasetBundle d = tiny_dataset();
  const fs::path dir = scratch("schema");
  write_dataset(dir, d);
  const auto good = dataset_meta(d);
  auto expect_rejected = [&](nlohmann::json meta) {
    write_file_atomic(dir / "meta.json", meta.dump());
    EXPECT_THROW(load_dataset(dir), InputError) << meta.dump().substr(0, 80);
  };
  auto m = good;
  m["version"] = "2.0";
  expect_rejected(m);
  m = good;
  m.erase("intrinsics");
  expect_rejected(m);
  m = good;
  m["views"][0]["c2w"] = std::vector<double>(12, 0.0);
  expect_rejected(m);
  m = good;
  m["near"] = 7.0;
  expect_rejected(m);
  m = good;
  m["views"][0]["split"] = "val";
  expect_rejected(m);
  write_file_atomic(dir / "meta.json", "{not json");
  EXPECT_THROW(load_dataset(dir), InputError);
}
