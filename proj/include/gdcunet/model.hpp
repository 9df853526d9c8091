// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  GDCUnet: U-shaped encoder/decoder mixing conventional and
 *         SAFD convolution blocks.
 *
 * With depth d there are d resolution levels. Levels 0 .. d-2 each own an
 * encoder block and a decoder block, level d-1 holds the bottleneck block.
 * Level widths are Cs * 2^l for l <= d-2; the bottleneck keeps the width of
 * level d-2 so that the upsampled stream can be added to that skip directly.
 *
 *   input --incentive 7x7--> enc0 --pool--> enc1 ... --pool--> bottleneck
 *   bottleneck --up--> (+ enc_{d-2}) --> dec_{d-2} --up--> ... (+ enc0) --> dec0 --1x1--> logits
 *
 * Decoder block l maps width(l) -> width(l) -> width(l-1) so that its
 * upsampled output matches the next skip. Every block is two convolutions, each followed by
 * the configured activation; blocks at `safd_levels` use SAFD convolutions
 * with the chosen preset (or conventional convolutions of the same kernel
 * size and dilation in ablation mode).
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdcunet/conv.hpp"
#include "gdcunet/ops.hpp"
#include "gdcunet/safdconv.hpp"
#include "gdcunet/serialize.hpp"

namespace gdc {

enum class Activation { relu, gelu };

/// Convolution weight init. he_uniform: U(-a, a) with a = sqrt(6 / fan_in),
/// which keeps activation variance through stacked ReLU convolutions;
/// fan_in_uniform: a = sqrt(1 / fan_in). Biases always use sqrt(1 / fan_in).
enum class ConvInit { he_uniform, fan_in_uniform };

inline double weight_gain(ConvInit i) { return i == ConvInit::he_uniform ? std::sqrt(6.0) : 1.0; }

struct GDCUnetConfig {
  int base_channels = 16;
  int depth = 5;
  std::set<int> safd_levels{2};
  int safd_setting = 5;
  bool ablation_conventional = false;
  int incentive_level = 0;  // level whose input passes the 7x7 block; -1 disables it
  Activation activation = Activation::relu;
  bool ff_activation = false;
  ConvInit conv_init = ConvInit::he_uniform;

  int width(int level) const {
    const int l = std::min(level, depth - 2);
    return base_channels << l;
  }

  void validate() const {
    if (base_channels < 1) throw ConfigError("GDCUnetConfig: base_channels must be positive");
    if (depth < 2) throw ConfigError("GDCUnetConfig: depth must be at least 2");
    if (!ablation_conventional && safd_levels.empty())
      throw ConfigError("GDCUnetConfig: safd_levels must be nonempty unless in ablation mode");
    for (int l : safd_levels)
      if (l < 0 || l >= depth)
        throw ConfigError("GDCUnetConfig: SAFD level " + std::to_string(l) + " out of range");
    if (incentive_level < -1 || incentive_level > depth - 2)
      throw ConfigError("GDCUnetConfig: incentive_level out of range");
    safd_setting_config();
  }

  SAFDConvConfig safd_setting_config() const {
    auto c = gdc::safd_setting(safd_setting);
    c.ff_activation = ff_activation;
    return c;
  }

  void validate_input(std::size_t h, std::size_t w) const {
    const std::size_t f = std::size_t(1) << (depth - 1);
    if (h == 0 || w == 0 || h % f != 0 || w % f != 0)
      throw ConfigError("GDCUnet: input " + std::to_string(h) + "x" + std::to_string(w) +
                        " not divisible by 2^(depth-1) = " + std::to_string(f));
  }
};

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

inline void to_json(nlohmann::json& j, const GDCUnetConfig& c) {
  j = nlohmann::json{{"base_channels", c.base_channels},
                     {"depth", c.depth},
                     {"safd_levels", std::vector<int>(c.safd_levels.begin(), c.safd_levels.end())},
                     {"safd_setting", c.safd_setting},
                     {"ablation_conventional", c.ablation_conventional},
                     {"incentive_level", c.incentive_level},
                     {"activation", to_string(c.activation)},
                     {"ff_activation", c.ff_activation},
                     {"conv_init", c.conv_init == ConvInit::he_uniform ? "he_uniform" : "fan_in_uniform"}};
}

inline void from_json(const nlohmann::json& j, GDCUnetConfig& c) {
  c.base_channels = j.at("base_channels").get<int>();
  c.depth = j.at("depth").get<int>();
  const auto levels = j.at("safd_levels").get<std::vector<int>>();
  c.safd_levels = std::set<int>(levels.begin(), levels.end());
  c.safd_setting = j.at("safd_setting").get<int>();
  c.ablation_conventional = j.at("ablation_conventional").get<bool>();
  c.incentive_level = j.value("incentive_level", 0);
  c.activation = j.value("activation", std::string("relu")) == "gelu" ? Activation::gelu
                                                                     : Activation::relu;
  c.ff_activation = j.value("ff_activation", false);
  const auto init = j.value("conv_init", std::string("he_uniform"));
  if (init != "he_uniform" && init != "fan_in_uniform") throw ConfigError("unknown conv_init " + init);
  c.conv_init = init == "he_uniform" ? ConvInit::he_uniform : ConvInit::fan_in_uniform;
}

/// One convolution: conventional or SAFD.
template <class T>
struct ConvUnit {
  std::string name;
  GridSpec grid;
  ConvKernel<T> kernel;                      // conventional path
  std::optional<SAFDConvLayer<T>> safd;      // SAFD path

  bool is_safd() const { return safd.has_value(); }

  Var<T> operator()(const Var<T>& x) const {
    return safd ? safdconv_forward(x, *safd) : conv2d(x, kernel, grid);
  }

  ParamList<T> parameters() const {
    if (safd) return safd->parameters();
    return {{"weight", kernel.weight}, {"bias", kernel.bias}};
  }
};

template <class T>
struct Block {
  std::string name;
  ConvUnit<T> first, second;
};

template <class T>
class GDCUnetModel {
public:
  GDCUnetModel() = default;

  static GDCUnetModel build(const GDCUnetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    GDCUnetModel m;
    m.config_ = cfg;
    m.seed_ = seed;
    Rng rng(seed);
    const int top = cfg.depth - 2;
    int channels = 3;
    for (int l = 0; l <= top; ++l) {
      if (cfg.incentive_level == l) {
        const int out = l == 0 ? cfg.base_channels : channels;
        m.incentive_ = m.conventional("incentive", 7, 1, channels, out, rng);
        channels = out;
      }
      m.encoder_.push_back(m.make_block("enc" + std::to_string(l), l, channels, cfg.width(l), cfg.width(l), rng));
      channels = cfg.width(l);
    }
    m.bottleneck_ = m.make_block("bottleneck", cfg.depth - 1, channels, channels, channels, rng);
    for (int l = top; l >= 0; --l) {
      const int out = l == 0 ? cfg.width(0) : cfg.width(l - 1);
      m.decoder_.push_back(m.make_block("dec" + std::to_string(l), l, cfg.width(l), cfg.width(l), out, rng));
    }
    m.head_ = m.conventional("head", 1, 1, cfg.width(0), 1, rng);
    return m;
  }

  const GDCUnetConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// Logits (B, H, W, 1) for an image batch (B, H, W, 3). If `taps` is given
  /// every block output is recorded under its tap name.
  Var<T> forward(const Var<T>& image, std::map<std::string, Tensor<T>>* taps = nullptr) const {
    const Shape s = image.shape();
    if (s.c != 3) throw ShapeError("GDCUnet: expected 3 input channels, got " + s.str());
    config_.validate_input(s.h, s.w);
    auto record = [&](const std::string& name, const Var<T>& v) {
      if (taps) (*taps)[name] = v.value();
    };

    Var<T> x = image;
    std::vector<Var<T>> skips;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      if (l > 0) x = maxpool2(x);
      if (incentive_ && config_.incentive_level == static_cast<int>(l)) {
        x = activate((*incentive_)(x));
        record("incentive", x);
      }
      x = run(encoder_[l], x);
      record(encoder_[l].name, x);
      skips.push_back(x);
    }
    x = run(bottleneck_, maxpool2(x));
    record(bottleneck_.name, x);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const Var<T>& skip = skips[skips.size() - 1 - i];
      const Var<T> up = upsample_bilinear2(x);
      if (up.shape().c != skip.shape().c)
        throw ShapeError("GDCUnet: skip width " + std::to_string(skip.shape().c) +
                         " differs from decoder width " + std::to_string(up.shape().c));
      x = run(decoder_[i], add(up, skip));
      record(decoder_[i].name, x);
    }
    x = (*head_)(x);
    record("logits", x);
    return x;
  }

  std::vector<std::string> tap_names() const {
    std::vector<std::string> names;
    if (incentive_) names.push_back("incentive");
    for (const auto& b : encoder_) names.push_back(b.name);
    names.push_back(bottleneck_.name);
    for (const auto& b : decoder_) names.push_back(b.name);
    names.push_back("logits");
    return names;
  }

  /// Post-block activation of one tap for a single image batch.
  Tensor<T> extract_feature_maps(const Tensor<T>& image, const std::string& tap) const {
    const auto names = tap_names();
    if (std::find(names.begin(), names.end(), tap) == names.end())
      throw UsageError("unknown tap '" + tap + "'");
    NoGradGuard guard;
    std::map<std::string, Tensor<T>> taps;
    forward(Var<T>(image), &taps);
    return taps.at(tap);
  }

  /// Every convolution in forward order, for per-layer accounting.
  std::vector<const ConvUnit<T>*> units() const {
    std::vector<const ConvUnit<T>*> out;
    if (incentive_) out.push_back(&*incentive_);
    for (const auto& b : encoder_) {
      out.push_back(&b.first);
      out.push_back(&b.second);
    }
    out.push_back(&bottleneck_.first);
    out.push_back(&bottleneck_.second);
    for (const auto& b : decoder_) {
      out.push_back(&b.first);
      out.push_back(&b.second);
    }
    out.push_back(&*head_);
    return out;
  }

  std::size_t safd_unit_count() const {
    std::size_t n = 0;
    for (auto* u : units()) n += u->is_safd();
    return n;
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    for (auto* u : units()) append(out, u->parameters(), u->name + ".");
    return out;
  }

  std::size_t parameter_count() const { return count_elements(parameters()); }

  nlohmann::json header() const {
    return {{"format", "gdcunet-checkpoint"},
            {"version", 1},
            {"config", config_},
            {"seed", seed_},
            {"dtype", sizeof(T) == 4 ? "float32" : "float64"}};
  }

  void save(const std::string& path, const nlohmann::json& extra = {}) const {
    auto h = header();
    if (!extra.is_null()) h["extra"] = extra;
    write_file(path, encode_archive(h.dump(), parameters()));
  }

  /// Rebuilds the architecture from the stored header and loads the weights.
  static GDCUnetModel load(const std::string& path) {
    const TensorArchive a = decode_archive(read_file(path));
    const auto h = nlohmann::json::parse(a.header);
    if (h.value("format", std::string()) != "gdcunet-checkpoint")
      throw FormatError(path + ": not a GDCUnet checkpoint");
    GDCUnetModel m = build(h.at("config").get<GDCUnetConfig>(), h.at("seed").get<std::uint64_t>());
    auto params = m.parameters();
    assign_parameters(a, params);
    return m;
  }

private:
  Var<T> activate(const Var<T>& x) const {
    return config_.activation == Activation::relu ? relu(x) : gelu(x);
  }

  Var<T> run(const Block<T>& b, const Var<T>& x) const {
    return activate(b.second(activate(b.first(x))));
  }

  ConvUnit<T> conventional(const std::string& name, int ks, int ds, int cin, int cout, Rng& rng) {
    ConvUnit<T> u;
    u.name = name;
    u.grid = GridSpec(ks, ds);
    u.kernel = init_conv_kernel<T>(ks, cin, cout, rng, weight_gain(config_.conv_init));
    return u;
  }

  ConvUnit<T> unit(const std::string& name, int level, int cin, int cout, Rng& rng) {
    if (!config_.safd_levels.count(level)) return conventional(name, 3, 1, cin, cout, rng);
    SAFDConvConfig sc = config_.safd_setting_config();
    if (config_.ablation_conventional)
      return conventional(name, sc.kernel_size, sc.dilation, cin, cout, rng);
    sc.in_channels = cin;
    sc.out_channels = cout;
    ConvUnit<T> u;
    u.name = name;
    u.grid = sc.grid();
    u.safd = SAFDConvLayer<T>::init(sc, rng, weight_gain(config_.conv_init));
    return u;
  }

  Block<T> make_block(const std::string& name, int level, int cin, int mid, int cout, Rng& rng) {
    Block<T> b;
    b.name = name;
    b.first = unit(name + ".conv1", level, cin, mid, rng);
    b.second = unit(name + ".conv2", level, mid, cout, rng);
    return b;
  }

  GDCUnetConfig config_;
  std::uint64_t seed_ = 0;
  std::optional<ConvUnit<T>> incentive_;
  std::vector<Block<T>> encoder_;
  Block<T> bottleneck_;
  std::vector<Block<T>> decoder_;
  std::optional<ConvUnit<T>> head_;
};

}  // namespace gdc
