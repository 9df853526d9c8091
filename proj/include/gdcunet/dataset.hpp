// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dataset.hpp
 * @brief  Image/mask pair loading, deterministic train/test splits and
 *         synthetic dataset generation.
 *
 * On-disk layout: `root/images/<stem>.png` paired with `root/masks/<stem><suffix>.png`.
 * Several annotator mask sets can be kept side by side as separate `masks`
 * directories; the loader uses whichever directory it is given.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gdcunet/synth.hpp"

namespace gdc {

/// Raised when files cannot be paired or decoded.
class IngestionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct DatasetSplit {
  std::vector<SamplePair> train, test;
};

struct LoadOptions {
  double train_ratio = 0.86;
  std::uint64_t seed = 0;
  std::size_t height = 0, width = 0;  // 0 keeps the native resolution
  std::string mask_suffix;            // e.g. "_1stHO"
  std::string mask_dir = "masks";
  std::vector<std::string> test_ids;  // explicit split; empty means seeded random
};

/// Number of training items for n pairs: round(ratio * n).
inline std::size_t train_count(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::llround(ratio * double(n)));
}

namespace detail {

inline std::map<std::string, std::filesystem::path> png_stems(const std::filesystem::path& dir,
                                                               const std::string& suffix) {
  std::map<std::string, std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    std::string stem = e.path().stem().string();
    if (!suffix.empty()) {
      if (stem.size() < suffix.size() || stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) != 0)
        continue;
      stem.resize(stem.size() - suffix.size());
    }
    out[stem] = e.path();
  }
  return out;
}

}  // namespace detail

/// Splits `items` into train/test. With `test_ids` empty the order is a seeded
/// shuffle of the id-sorted list and the first round(ratio * n) items train.
inline DatasetSplit split_pairs(std::vector<SamplePair> items, double ratio, std::uint64_t seed,
                                const std::vector<std::string>& test_ids = {}) {
  if (items.empty()) throw ConfigError("dataset is empty");
  std::sort(items.begin(), items.end(),
            [](const SamplePair& a, const SamplePair& b) { return a.id < b.id; });
  DatasetSplit s;
  if (!test_ids.empty()) {
    const std::set<std::string> wanted(test_ids.begin(), test_ids.end());
    std::set<std::string> seen;
    for (auto& p : items) {
      if (wanted.count(p.id)) {
        seen.insert(p.id);
        s.test.push_back(std::move(p));
      } else {
        s.train.push_back(std::move(p));
      }
    }
    for (const auto& id : wanted)
      if (!seen.count(id)) throw ConfigError("test id not found in dataset: " + id);
  } else {
    if (!(ratio > 0 && ratio <= 1)) throw ConfigError("train ratio must lie in (0, 1]");
    Rng rng(seed);
    std::shuffle(items.begin(), items.end(), rng);
    const std::size_t n_train = train_count(items.size(), ratio);
    for (std::size_t i = 0; i < items.size(); ++i)
      (i < n_train ? s.train : s.test).push_back(std::move(items[i]));
  }
  if (s.train.empty()) throw ConfigError("split leaves the training set empty");
  if (s.test.empty()) throw ConfigError("split leaves the test set empty");
  return s;
}

/// Loads every pair under `root` (resized if requested) without splitting.
inline std::vector<SamplePair> load_pairs(const std::filesystem::path& root, const LoadOptions& opt = {}) {
  if (!std::filesystem::is_directory(root)) throw ConfigError("dataset root not found: " + root.string());
  const auto images = detail::png_stems(root / "images", "");
  const auto masks = detail::png_stems(root / opt.mask_dir, opt.mask_suffix);
  if (images.empty() && masks.empty()) throw ConfigError("no images found under " + root.string());

  std::vector<std::string> unpaired;
  for (const auto& [stem, path] : images)
    if (!masks.count(stem)) unpaired.push_back(path.string() + " (no mask)");
  for (const auto& [stem, path] : masks)
    if (!images.count(stem)) unpaired.push_back(path.string() + " (no image)");
  if (!unpaired.empty()) {
    std::string msg = "unpaired files:";
    for (const auto& u : unpaired) msg += "\n  " + u;
    throw IngestionError(msg);
  }

  std::vector<SamplePair> out;
  for (const auto& [stem, path] : images) {
    Image img = read_image(path.string(), 3);
    BinaryMask m = read_mask(masks.at(stem).string());
    if (m.height != img.shape().h || m.width != img.shape().w)
      throw IngestionError("size mismatch between " + path.string() + " and its mask");
    if (opt.height && opt.width) {
      img = resize_bilinear(img, opt.height, opt.width);
      m = resize_nearest(m, opt.height, opt.width);
    }
    out.push_back({std::move(img), std::move(m), stem});
  }
  return out;
}

inline DatasetSplit load_dataset(const std::filesystem::path& root, const LoadOptions& opt = {}) {
  return split_pairs(load_pairs(root, opt), opt.train_ratio, opt.seed, opt.test_ids);
}

/// Writes pairs in the layout `load_dataset` reads.
inline void write_dataset(const std::filesystem::path& root, const std::vector<SamplePair>& pairs) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  for (const auto& p : pairs) {
    write_image(p.image, (root / "images" / (p.id + ".png")).string());
    write_mask(p.mask, (root / "masks" / (p.id + ".png")).string());
  }
}

/// Frozen synthetic split: train item i uses seed `seed + i`, test item j
/// uses `seed + n_train + j`; all other fields come from `base`.
inline DatasetSplit synthetic_dataset(std::size_t n_train, std::size_t n_test, SynthConfig base) {
  if (n_train == 0 || n_test == 0) throw ConfigError("synthetic split sizes must be positive");
  DatasetSplit s;
  const std::uint64_t seed0 = base.seed;
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    base.seed = seed0 + i;
    (i < n_train ? s.train : s.test).push_back(synth_vessels(base));
  }
  return s;
}

}  // namespace gdc
