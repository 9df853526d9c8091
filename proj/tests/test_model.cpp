// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "gdcunet/model.hpp"

using namespace gdc;

namespace {

GDCUnetConfig small(int setting = 3) {
  GDCUnetConfig c;
  c.depth = 4;
  c.safd_setting = setting;
  return c;
}

Tensor<double> random_image(std::size_t b, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<double> t(Shape{b, h, w, 3});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("gdcunet_test_" + name);
}

}  // namespace

TEST(Model, LogitShapeMatchesInput) {
  const auto m = GDCUnetModel<double>::build(small(), 1);
  const auto y = m.forward(Var<double>(random_image(2, 16, 24, 2)));
  EXPECT_EQ(y.shape(), (Shape{2, 16, 24, 1}));
  EXPECT_TRUE(y.value().all_finite());
}

TEST(Model, RejectsIndivisibleInputAndWrongChannels) {
  const auto m = GDCUnetModel<double>::build(small(), 1);
  EXPECT_THROW(m.forward(Var<double>(random_image(1, 12, 16, 0))), ConfigError);
  EXPECT_THROW(m.forward(Var<double>(Tensor<double>(Shape{1, 16, 16, 1}))), ShapeError);
}

TEST(Model, ConfigValidation) {
  auto c = small();
  c.safd_levels = {7};
  EXPECT_THROW(c.validate(), ConfigError);
  c.safd_levels.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c.ablation_conventional = true;
  EXPECT_NO_THROW(c.validate());
  c.safd_setting = 9;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(Model, ZeroParametersGiveZeroLogits) {
  auto m = GDCUnetModel<double>::build(small(), 4);
  for (auto& p : m.parameters()) p.var.mutable_value().fill(0.0);
  const auto y = m.forward(Var<double>(random_image(1, 16, 16, 5)));
  for (std::size_t i = 0; i < y.value().size(); ++i) EXPECT_EQ(y.value()[i], 0.0);
}

TEST(Model, SameSeedSameWeights) {
  const auto a = GDCUnetModel<double>::build(small(), 11).parameters();
  const auto b = GDCUnetModel<double>::build(small(), 11).parameters();
  const auto c = GDCUnetModel<double>::build(small(), 12).parameters();
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].var.value().values(), b[i].var.value().values());
    differs = differs || a[i].var.value().values() != c[i].var.value().values();
  }
  EXPECT_TRUE(differs);
}

TEST(Model, SettingTotalsNearReference) {
  const double reference[6] = {1.15e6, 1.45e6, 0.954e6, 1.17e6, 1.40e6, 2.16e6};
  for (int s = 1; s <= 6; ++s) {
    GDCUnetConfig c;
    c.safd_setting = s;
    const double n = double(GDCUnetModel<float>::build(c, 0).parameter_count());
    EXPECT_NEAR(n / reference[s - 1], 1.0, 0.2) << "setting " << s << ": " << n;
  }
}

TEST(Model, AblationReplacesEverySafdUnit) {
  GDCUnetConfig c;
  const auto full = GDCUnetModel<float>::build(c, 0);
  c.ablation_conventional = true;
  const auto plain = GDCUnetModel<float>::build(c, 0);
  EXPECT_GT(full.safd_unit_count(), 0u);
  EXPECT_EQ(plain.safd_unit_count(), 0u);
  EXPECT_LT(plain.parameter_count(), full.parameter_count());
  EXPECT_EQ(plain.units().size(), full.units().size());
}

TEST(Model, TapsCoverEveryBlock) {
  const auto m = GDCUnetModel<double>::build(small(), 2);
  const auto names = m.tap_names();
  EXPECT_EQ(names.front(), "incentive");
  EXPECT_EQ(names.back(), "logits");
  EXPECT_EQ(names.size(), 1u + 3u + 1u + 3u + 1u);
  const auto img = random_image(1, 16, 16, 3);
  EXPECT_EQ(m.extract_feature_maps(img, "enc1").shape(), (Shape{1, 8, 8, 32}));
  EXPECT_EQ(m.extract_feature_maps(img, "bottleneck").shape(), (Shape{1, 2, 2, 64}));
  EXPECT_THROW(m.extract_feature_maps(img, "nope"), UsageError);
}

TEST(Model, CheckpointRoundTripIsBitwise) {
  const auto path = temp_file("ckpt.gdc");
  const auto m = GDCUnetModel<float>::build(small(5), 21);
  m.save(path.string(), {{"note", "x"}});
  const auto back = GDCUnetModel<float>::load(path.string());
  const auto a = m.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].var.value().values(), b[i].var.value().values());
  }
  EXPECT_EQ(back.config().safd_setting, 5);
  std::filesystem::remove(path);
}

TEST(Model, CorruptCheckpointIsRejected) {
  const auto path = temp_file("bad.gdc");
  const auto m = GDCUnetModel<float>::build(small(), 1);
  m.save(path.string());
  auto bytes = read_file(path.string());
  bytes[bytes.size() / 2] ^= 0x5a;
  write_file(path.string(), bytes);
  EXPECT_THROW(GDCUnetModel<float>::load(path.string()), FormatError);
  write_file(path.string(), "not a checkpoint");
  EXPECT_THROW(GDCUnetModel<float>::load(path.string()), FormatError);
  std::filesystem::remove(path);
}

TEST(Model, ConfigJsonRoundTrip) {
  GDCUnetConfig c;
  c.safd_levels = {1, 3};
  c.activation = Activation::gelu;
  c.conv_init = ConvInit::fan_in_uniform;
  const nlohmann::json j = c;
  const auto back = j.get<GDCUnetConfig>();
  EXPECT_EQ(back.safd_levels, c.safd_levels);
  EXPECT_EQ(back.activation, Activation::gelu);
  EXPECT_EQ(back.conv_init, ConvInit::fan_in_uniform);
}
