// SPDX-License-Identifier: Apache-2.0
// Run manifests and the artifact-producing training driver shared by the CLI
// and the acceptance checks.
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gdcunet/train.hpp"

namespace gdc {

inline constexpr const char* kToolVersion = "0.1.0";

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"seed", c.seed},         {"height", c.height},     {"width", c.width},
       {"branches", c.branches}, {"branch_depth", c.branch_depth},
       {"width_min", c.width_min}, {"width_max", c.width_max},
       {"curvature", c.curvature}, {"noise", c.noise},   {"contrast", c.contrast}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  c.seed = j.value("seed", c.seed);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.branches = j.value("branches", c.branches);
  c.branch_depth = j.value("branch_depth", c.branch_depth);
  c.width_min = j.value("width_min", c.width_min);
  c.width_max = j.value("width_max", c.width_max);
  c.curvature = j.value("curvature", c.curvature);
  c.noise = j.value("noise", c.noise);
  c.contrast = j.value("contrast", c.contrast);
}

/// Where the images come from: a frozen synthetic set or a directory.
struct DataSource {
  bool synthetic = true;
  SynthConfig synth;
  std::size_t n_train = 50, n_test = 10;
  std::string path;
  LoadOptions load;

  DatasetSplit materialize() const {
    if (synthetic) return synthetic_dataset(n_train, n_test, synth);
    if (path.empty()) throw UsageError("no dataset path given (use --data DIR or --synthetic)");
    return load_dataset(path, load);
  }
};

inline void to_json(nlohmann::json& j, const DataSource& d) {
  if (d.synthetic) {
    j = {{"kind", "synthetic"}, {"synth", d.synth}, {"n_train", d.n_train}, {"n_test", d.n_test}};
  } else {
    j = {{"kind", "directory"},
         {"path", d.path},
         {"train_ratio", d.load.train_ratio},
         {"split_seed", d.load.seed},
         {"height", d.load.height},
         {"width", d.load.width},
         {"mask_suffix", d.load.mask_suffix},
         {"mask_dir", d.load.mask_dir},
         {"test_ids", d.load.test_ids}};
  }
}

inline void from_json(const nlohmann::json& j, DataSource& d) {
  d = DataSource{};
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "synthetic") {
    d.synthetic = true;
    d.synth = j.at("synth").get<SynthConfig>();
    d.n_train = j.at("n_train").get<std::size_t>();
    d.n_test = j.at("n_test").get<std::size_t>();
  } else if (kind == "directory") {
    d.synthetic = false;
    d.path = j.at("path").get<std::string>();
    d.load.train_ratio = j.value("train_ratio", d.load.train_ratio);
    d.load.seed = j.value("split_seed", d.load.seed);
    d.load.height = j.value("height", d.load.height);
    d.load.width = j.value("width", d.load.width);
    d.load.mask_suffix = j.value("mask_suffix", d.load.mask_suffix);
    d.load.mask_dir = j.value("mask_dir", d.load.mask_dir);
    d.load.test_ids = j.value("test_ids", d.load.test_ids);
  } else {
    throw ConfigError("manifest: unknown data kind '" + kind + "'");
  }
}

/// Everything needed to repeat a training run.
struct RunManifest {
  GDCUnetConfig model;
  TrainConfig train;
  DataSource data;
  std::uint64_t seed = 0;       // model init and batch order
  bool double_precision = false;
  double target_dice = 0;       // stop once test Dice reaches this; 0 runs the full schedule
  bool compare_ablation = false;
};

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  const SAFDConvConfig s = m.model.safd_setting_config();
  j = {{"tool", "gdcunet"},
       {"version", kToolVersion},
       {"seed", m.seed},
       {"precision", m.double_precision ? "float64" : "float32"},
       {"model", m.model},
       {"safd", {{"kernel_size", s.kernel_size},
                 {"dilation", s.dilation},
                 {"embed_multiplier", s.embed_multiplier},
                 {"heads", s.heads},
                 {"hidden_dim", s.hidden_dim}}},
       {"train", m.train},
       {"data", m.data},
       {"target_dice", m.target_dice},
       {"compare_ablation", m.compare_ablation},
       {"artifacts", {{"best", "best.gdc"},
                      {"final", "final.gdc"},
                      {"epoch_log", "epochs.csv"},
                      {"manifest", "manifest.json"}}}};
}

inline void from_json(const nlohmann::json& j, RunManifest& m) {
  if (j.value("tool", std::string()) != "gdcunet") throw ConfigError("not a gdcunet run manifest");
  m = RunManifest{};
  m.seed = j.at("seed").get<std::uint64_t>();
  const auto precision = j.value("precision", std::string("float32"));
  if (precision != "float32" && precision != "float64")
    throw ConfigError("manifest: unknown precision " + precision);
  m.double_precision = precision == "float64";
  m.model = j.at("model").get<GDCUnetConfig>();
  m.train = j.at("train").get<TrainConfig>();
  m.data = j.at("data").get<DataSource>();
  m.target_dice = j.value("target_dice", 0.0);
  m.compare_ablation = j.value("compare_ablation", false);
}

inline RunManifest read_manifest(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot open manifest " + p.string());
  return nlohmann::json::parse(in).get<RunManifest>();
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw UsageError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

struct RunSummary {
  std::vector<EpochRecord> log;
  int best_epoch = -1;
  MetricsReport best;
  std::size_t parameters = 0;
  std::size_t steps = 0;
  double seconds = 0;
};

/// Trains one model and writes best.gdc, final.gdc and epochs.csv into `dir`.
/// `max_epochs` (if set) ends the run after that many epochs while keeping the
/// manifest's schedule length.
template <class T>
RunSummary train_to_dir(const RunManifest& m, const DatasetSplit& data, const std::filesystem::path& dir,
                        std::optional<int> max_epochs = {},
                        const std::function<void(const EpochRecord&)>& progress = {}) {
  std::filesystem::create_directories(dir);
  auto model = GDCUnetModel<T>::build(m.model, m.seed);
  TrainConfig tc = m.train;
  tc.seed = m.seed;
  const auto s0 = data.train.front().image.shape();
  m.model.validate_input(s0.h, s0.w);

  std::ofstream log(dir / "epochs.csv");
  log << epoch_log_header() << '\n';
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(model, data, tc, [&](const EpochRecord& r) {
    write_epoch_row(log, r);
    log.flush();
    if (progress) progress(r);
    if (max_epochs && r.epoch + 1 >= *max_epochs) return false;
    return !(m.target_dice > 0 && r.test.dice >= m.target_dice);
  });

  const nlohmann::json extra = {{"best_epoch", result.best_epoch}, {"epochs_run", result.log.size()}};
  model.save((dir / "final.gdc").string(), extra);
  auto params = model.parameters();
  const auto final_values = snapshot(params);
  restore(params, result.best_parameters);
  model.save((dir / "best.gdc").string(), extra);
  restore(params, final_values);

  RunSummary s;
  s.log = std::move(result.log);
  s.best_epoch = result.best_epoch;
  s.best = result.best;
  s.parameters = model.parameter_count();
  s.steps = result.steps;
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

struct RunOutcome {
  RunSummary main;
  std::optional<RunSummary> ablation;
};

inline const char* ablation_report_header() {
  return "variant,parameters,epochs,best_epoch,best_iou,best_dice,final_iou,final_dice,seconds";
}

inline void write_ablation_row(std::ostream& os, const std::string& variant, const RunSummary& s) {
  const auto& last = s.log.back().test;
  os << std::setprecision(10) << variant << ',' << s.parameters << ',' << s.log.size() << ','
     << s.best_epoch << ',' << s.best.iou << ',' << s.best.dice << ',' << last.iou << ','
     << last.dice << ',' << s.seconds << '\n';
}

/// Writes manifest.json and the run artifacts. With `compare_ablation` the same
/// run is repeated with conventional convolutions in `dir/ablation` for the
/// same number of epochs, and both rows land in ablation_report.csv.
inline RunOutcome run_manifest(const RunManifest& m, const std::filesystem::path& dir,
                               const std::function<void(const std::string&, const EpochRecord&)>& progress = {}) {
  m.model.validate();
  m.train.validate();
  std::filesystem::create_directories(dir);
  write_json(dir / "manifest.json", m);
  const DatasetSplit data = m.data.materialize();

  auto run = [&](const RunManifest& r, const std::filesystem::path& d, const std::string& tag,
                 std::optional<int> cap) {
    auto cb = [&](const EpochRecord& e) {
      if (progress) progress(tag, e);
    };
    return r.double_precision ? train_to_dir<double>(r, data, d, cap, cb)
                              : train_to_dir<float>(r, data, d, cap, cb);
  };

  RunOutcome out;
  out.main = run(m, dir, m.model.ablation_conventional ? "conventional" : "safd", std::nullopt);
  if (m.compare_ablation) {
    RunManifest a = m;
    a.model.ablation_conventional = !m.model.ablation_conventional;
    a.target_dice = 0;
    a.compare_ablation = false;
    out.ablation = run(a, dir / "ablation", a.model.ablation_conventional ? "conventional" : "safd",
                       static_cast<int>(out.main.log.size()));
    std::ofstream rep(dir / "ablation_report.csv");
    rep << ablation_report_header() << '\n';
    write_ablation_row(rep, m.model.ablation_conventional ? "conventional" : "safd", out.main);
    write_ablation_row(rep, a.model.ablation_conventional ? "conventional" : "safd", *out.ablation);
  }
  return out;
}

}  // namespace gdc
