// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "gdcunet/dataset.hpp"
#include "gdcunet/histogram.hpp"

using namespace gdc;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("gdcunet_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

private:
  fs::path path_;
};

std::vector<SamplePair> small_pairs(std::size_t n, std::size_t size = 8) {
  std::vector<SamplePair> out;
  SynthConfig s;
  s.height = s.width = size;
  for (std::size_t i = 0; i < n; ++i) {
    s.seed = 500 + i;
    auto p = synth_vessels(s);
    p.id = "img" + std::to_string(100 + i);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST(Png, ImageRoundTripIsQuantizedExactly) {
  TempDir dir("png");
  Image img(Shape{1, 3, 4, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = double(i * 7 % 256) / 255.0;
  const auto path = (dir.path() / "a.png").string();
  write_image(img, path);
  const auto back = read_image(path);
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(back[i], img[i]);
}

TEST(Png, HalfIntensityQuantizesTo128) {
  EXPECT_EQ(quantize(0.5), 128);
  EXPECT_EQ(quantize(-1.0), 0);
  EXPECT_EQ(quantize(2.0), 255);
}

TEST(Png, MaskRoundTripAndGrayToRgb) {
  TempDir dir("mask");
  BinaryMask m(5, 3);
  m(1, 2) = m(4, 0) = 1;
  const auto path = (dir.path() / "m.png").string();
  write_mask(m, path);
  EXPECT_EQ(read_mask(path), m);
  const auto rgb = read_image(path, 3);
  EXPECT_EQ(rgb.shape(), (Shape{1, 5, 3, 3}));
  EXPECT_EQ(rgb(0, 1, 2, 1), 1.0);
}

TEST(Png, MissingFileThrows) {
  EXPECT_THROW(read_image("/nonexistent/x.png"), ImageError);
}

TEST(Resize, NearestKeepsBinaryAndBilinearKeepsConstant) {
  BinaryMask m(4, 4);
  m(0, 0) = 1;
  const auto r = resize_nearest(m, 8, 8);
  EXPECT_EQ(r.count(), 4u);
  EXPECT_EQ(r(1, 1), 1);
  const Image flat(Shape{1, 5, 7, 3}, 0.25);
  const auto big = resize_bilinear(flat, 10, 3);
  for (double v : big.values()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Split, DefaultRatioGivesTwentyFourOfTwentyEight) {
  EXPECT_EQ(train_count(28, 0.86), 24u);
  const auto s = split_pairs(small_pairs(28, 4), 0.86, 1);
  EXPECT_EQ(s.train.size(), 24u);
  EXPECT_EQ(s.test.size(), 4u);
}

TEST(Split, SeededAndOrderIndependent) {
  auto items = small_pairs(10, 4);
  const auto a = split_pairs(items, 0.7, 9);
  std::reverse(items.begin(), items.end());
  const auto b = split_pairs(items, 0.7, 9);
  ASSERT_EQ(a.test.size(), b.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test[i].id, b.test[i].id);
  std::set<std::string> ids;
  for (const auto& p : a.train) ids.insert(p.id);
  for (const auto& p : a.test) EXPECT_FALSE(ids.count(p.id));
}

TEST(Split, EmptySideIsConfigError) {
  EXPECT_THROW(split_pairs(small_pairs(5, 4), 1.0, 0), ConfigError);
  EXPECT_THROW(split_pairs(small_pairs(5, 4), 0.0, 0), ConfigError);
  EXPECT_THROW(split_pairs({}, 0.5, 0), ConfigError);
}

TEST(Split, ExplicitTestIds) {
  const auto s = split_pairs(small_pairs(5, 4), 0.5, 0, {"img101", "img103"});
  ASSERT_EQ(s.test.size(), 2u);
  EXPECT_EQ(s.test[0].id, "img101");
  EXPECT_EQ(s.test[1].id, "img103");
  EXPECT_THROW(split_pairs(small_pairs(5, 4), 0.5, 0, {"zzz"}), ConfigError);
}

TEST(Dataset, WriteThenLoadRoundTrip) {
  TempDir dir("ds");
  const auto pairs = small_pairs(6);
  write_dataset(dir.path(), pairs);
  LoadOptions opt;
  opt.train_ratio = 0.5;
  const auto s = load_dataset(dir.path(), opt);
  EXPECT_EQ(s.train.size() + s.test.size(), 6u);
  const auto loaded = load_pairs(dir.path());
  ASSERT_EQ(loaded.size(), 6u);
  EXPECT_EQ(loaded[0].mask, pairs[0].mask);
  EXPECT_EQ(loaded[0].image.shape(), (Shape{1, 8, 8, 3}));
}

TEST(Dataset, ResizesOnLoad) {
  TempDir dir("resize");
  write_dataset(dir.path(), small_pairs(2));
  LoadOptions opt;
  opt.height = opt.width = 16;
  const auto loaded = load_pairs(dir.path(), opt);
  EXPECT_EQ(loaded[1].image.shape(), (Shape{1, 16, 16, 3}));
  EXPECT_EQ(loaded[1].mask.height, 16u);
}

TEST(Dataset, UnpairedFilesAreListed) {
  TempDir dir("unpaired");
  write_dataset(dir.path(), small_pairs(3));
  fs::remove(dir.path() / "masks" / "img101.png");
  try {
    load_pairs(dir.path());
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("img101.png"), std::string::npos);
  }
}

TEST(Dataset, MaskSuffix) {
  TempDir dir("suffix");
  write_dataset(dir.path(), small_pairs(2));
  for (const auto& e : fs::directory_iterator(dir.path() / "masks")) {
    auto to = e.path();
    to.replace_filename(e.path().stem().string() + "_1stHO.png");
    fs::rename(e.path(), to);
  }
  LoadOptions opt;
  opt.mask_suffix = "_1stHO";
  EXPECT_EQ(load_pairs(dir.path(), opt).size(), 2u);
  EXPECT_THROW(load_pairs(dir.path()), IngestionError);
}

TEST(Histogram, CountsAndCsv) {
  const std::vector<double> v = {0.0, 0.1, 0.5, 0.9, 1.0};
  const auto h = histogram<double>(v, 4);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 0, 1, 2}));
  EXPECT_EQ(h.total(), 5u);
  EXPECT_DOUBLE_EQ(h.bin_center(0), 0.125);
  std::ostringstream os;
  h.write_csv(os);
  EXPECT_EQ(os.str().substr(0, 17), "bin_center,count\n");
  EXPECT_THROW(histogram<double>(v, 0), UsageError);
}

TEST(Histogram, ConstantChannelFillsFirstBin) {
  Tensor<double> t(Shape{1, 2, 2, 2});
  for (std::size_t i = 0; i < t.size(); i += 2) t[i] = 3.0;
  const auto h = channel_histogram(t, 0, 5);
  EXPECT_EQ(h.counts[0], 4u);
  EXPECT_EQ(h.total(), 4u);
}

TEST(Synth, DeterministicPerSeed) {
  SynthConfig c;
  c.seed = 77;
  c.height = c.width = 32;
  const auto a = synth_vessels(c), b = synth_vessels(c);
  EXPECT_EQ(a.image.values(), b.image.values());
  EXPECT_EQ(a.mask, b.mask);
  c.seed = 78;
  EXPECT_NE(synth_vessels(c).mask, a.mask);
}

TEST(Synth, ForegroundFractionInBand) {
  SynthConfig c;
  for (std::uint64_t s = 0; s < 20; ++s) {
    c.seed = 1000 + s;
    const auto p = synth_vessels(c);
    const double f = double(p.mask.count()) / double(p.mask.data.size());
    EXPECT_GE(f, 0.02) << s;
    EXPECT_LE(f, 0.20) << s;
    for (double v : p.image.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synth, FrozenSplitUsesConsecutiveSeeds) {
  SynthConfig c;
  c.seed = 10;
  c.height = c.width = 16;
  const auto s = synthetic_dataset(2, 1, c);
  c.seed = 12;
  EXPECT_EQ(s.test[0].mask, synth_vessels(c).mask);
}
