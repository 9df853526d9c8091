// SPDX-License-Identifier: Apache-2.0
// gdcunet: train, evaluate, gradient-check, synthesize data, count
// parameters and inspect feature maps.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "gdcunet/gradcheck.hpp"
#include "gdcunet/histogram.hpp"
#include "gdcunet/run.hpp"

using namespace gdc;
namespace fs = std::filesystem;

namespace {

struct DataFlags {
  bool synthetic = false;
  std::string dir;
  std::size_t n_train = 50, n_test = 10, size = 128;
  std::uint64_t synth_seed = 1000;
  double train_ratio = 0.86;
  std::uint64_t split_seed = 0;
  std::size_t height = 0, width = 0;
  std::string mask_suffix, mask_dir = "masks";
  std::vector<std::string> test_ids;

  void attach(CLI::App* app) {
    app->add_flag("--synthetic", synthetic, "Use the built-in synthetic vessel set");
    app->add_option("--data", dir, "Dataset root with images/ and masks/");
    app->add_option("--n-train", n_train, "Synthetic training images")->capture_default_str();
    app->add_option("--n-test", n_test, "Synthetic test images")->capture_default_str();
    app->add_option("--size", size, "Synthetic image side length")->capture_default_str();
    app->add_option("--synth-seed", synth_seed, "First seed of the synthetic set")->capture_default_str();
    app->add_option("--train-ratio", train_ratio, "Training fraction for directory data")->capture_default_str();
    app->add_option("--split-seed", split_seed, "Seed of the train/test shuffle")->capture_default_str();
    app->add_option("--height", height, "Resize directory images to this height");
    app->add_option("--width", width, "Resize directory images to this width");
    app->add_option("--mask-suffix", mask_suffix, "Mask filename suffix, e.g. _1stHO");
    app->add_option("--mask-dir", mask_dir, "Mask directory name under the root")->capture_default_str();
    app->add_option("--test-ids", test_ids, "Explicit test image ids");
  }

  DataSource source() const {
    if (synthetic == !dir.empty()) throw UsageError("give exactly one of --synthetic and --data DIR");
    DataSource d;
    d.synthetic = synthetic;
    d.synth.seed = synth_seed;
    d.synth.height = d.synth.width = size;
    d.n_train = n_train;
    d.n_test = n_test;
    d.path = dir;
    d.load.train_ratio = train_ratio;
    d.load.seed = split_seed;
    d.load.height = height;
    d.load.width = width;
    d.load.mask_suffix = mask_suffix;
    d.load.mask_dir = mask_dir;
    d.load.test_ids = test_ids;
    return d;
  }
};

struct ModelFlags {
  int setting = 5, depth = 5, base = 16;
  std::vector<int> safd_levels{2};
  bool ablation = false;
  std::string activation = "relu";

  void attach(CLI::App* app) {
    app->add_option("--setting", setting, "SAFD preset 1-6")->capture_default_str();
    app->add_option("--depth", depth, "Resolution levels")->capture_default_str();
    app->add_option("--base-channels", base, "Channels at the first level")->capture_default_str();
    app->add_option("--safd-levels", safd_levels, "Levels whose blocks use SAFD convolutions");
    app->add_flag("--ablation", ablation, "Replace every SAFD convolution by a conventional one");
    app->add_option("--activation", activation, "relu or gelu")
        ->check(CLI::IsMember({"relu", "gelu"}))
        ->capture_default_str();
  }

  GDCUnetConfig config() const {
    if (setting < 1 || setting > 6) throw UsageError("--setting must be 1-6");
    GDCUnetConfig c;
    c.safd_setting = setting;
    c.depth = depth;
    c.base_channels = base;
    c.safd_levels = std::set<int>(safd_levels.begin(), safd_levels.end());
    c.ablation_conventional = ablation;
    c.activation = activation == "gelu" ? Activation::gelu : Activation::relu;
    c.validate();
    return c;
  }
};

std::string dtype_of(const std::string& checkpoint) {
  const auto a = decode_archive(read_file(checkpoint));
  return nlohmann::json::parse(a.header).value("dtype", std::string("float32"));
}

void print_epoch(const std::string& tag, const EpochRecord& r) {
  std::printf("[%s] epoch %d lr %.3g loss %.5f test iou %.4f dice %.4f\n", tag.c_str(), r.epoch, r.lr,
              r.train_loss, r.test.iou, r.test.dice);
  std::fflush(stdout);
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
  DataFlags data;
  ModelFlags model;
  int epochs = 50, batch = 4;
  double lr = 1e-4, lr_min = 1e-5;
  std::uint64_t seed = 0;
  std::string precision = "float32", out = "run", from_manifest;
  double target_dice = 0;
  bool compare_ablation = false, quiet = false;
};

int cmd_train(const TrainFlags& f) {
  RunManifest m;
  if (!f.from_manifest.empty()) {
    m = read_manifest(f.from_manifest);
  } else {
    m.model = f.model.config();
    m.data = f.data.source();
    m.train.total_epochs = f.epochs;
    m.train.batch_size = f.batch;
    m.train.lr_init = f.lr;
    m.train.lr_min = f.lr_min;
    m.seed = f.seed;
    m.double_precision = f.precision == "float64";
    m.target_dice = f.target_dice;
    m.compare_ablation = f.compare_ablation;
  }
  m.train.seed = m.seed;
  const auto outcome = run_manifest(m, f.out, f.quiet ? nullptr : print_epoch);
  const auto& s = outcome.main;
  std::printf("best epoch %d: iou %.4f dice %.4f (%zu parameters, %zu steps, %.1f s)\n", s.best_epoch,
              s.best.iou, s.best.dice, s.parameters, s.steps, s.seconds);
  if (outcome.ablation)
    std::printf("ablation best epoch %d: iou %.4f dice %.4f (%zu parameters)\n", outcome.ablation->best_epoch,
                outcome.ablation->best.iou, outcome.ablation->best.dice, outcome.ablation->parameters);
  std::printf("artifacts in %s\n", f.out.c_str());
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalFlags {
  DataFlags data;
  std::string checkpoint, split = "test", out = "metrics.csv", export_masks;
};

template <class T>
int eval_with(const EvalFlags& f) {
  const auto model = GDCUnetModel<T>::load(f.checkpoint);
  const auto data = f.data.source().materialize();
  std::vector<const SamplePair*> items;
  if (f.split != "test")
    for (const auto& p : data.train) items.push_back(&p);
  if (f.split != "train")
    for (const auto& p : data.test) items.push_back(&p);
  const auto s = items.front()->image.shape();
  model.config().validate_input(s.h, s.w);
  if (!f.export_masks.empty()) fs::create_directories(f.export_masks);

  std::ofstream csv(f.out);
  if (!csv) throw UsageError("cannot write " + f.out);
  csv << metrics_csv_header() << '\n';
  std::vector<MetricsReport> rows;
  for (const auto* p : items) {
    const BinaryMask pred = predict(model, *p);
    rows.push_back(evaluate_masks(pred, p->mask));
    write_metrics_row(csv, p->id, rows.back());
    if (!f.export_masks.empty()) write_mask(pred, (fs::path(f.export_masks) / (p->id + ".png")).string());
  }
  const auto mean = mean_report(rows);
  write_metrics_row(csv, "mean", mean);
  std::printf("%zu images: iou %.4f dice %.4f recall %.4f specificity %.4f precision %.4f\n", rows.size(),
              mean.iou, mean.dice, mean.recall, mean.specificity, mean.precision);
  return 0;
}

int cmd_eval(const EvalFlags& f) {
  return dtype_of(f.checkpoint) == "float64" ? eval_with<double>(f) : eval_with<float>(f);
}

// ---- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(const std::string& scope, bool inject, int instances) {
  GradCheckOptions o;
  o.inject_sign_flip = inject;
  o.instances = instances;
  bool ok = true;
  std::printf("%-12s %-18s %10s %9s  %s\n", "scope", "op", "worst", "instances", "result");
  for (const auto& r : run_gradcheck(scope, o)) {
    const bool pass = r.passed(o.tolerance);
    ok = ok && pass;
    std::printf("%-12s %-18s %10.3e %9d  %s\n", r.scope.c_str(), r.op.c_str(), r.worst, r.instances,
                pass ? "pass" : "FAIL");
  }
  std::printf("%s\n", ok ? "all probes within 1e-4" : "gradient check FAILED");
  return ok ? 0 : 1;
}

// ---- synth -------------------------------------------------------------------

int cmd_synth(const std::string& out, std::size_t count, std::size_t size, std::uint64_t seed) {
  SynthConfig c;
  c.height = c.width = size;
  std::vector<SamplePair> pairs;
  for (std::size_t i = 0; i < count; ++i) {
    c.seed = seed + i;
    pairs.push_back(synth_vessels(c));
  }
  write_dataset(out, pairs);
  std::printf("wrote %zu pairs to %s\n", count, out.c_str());
  return 0;
}

// ---- params ------------------------------------------------------------------

int cmd_params(const ModelFlags& f, bool all_settings) {
  if (all_settings) {
    std::printf("setting,kernel_size,dilation,embed_multiplier,heads,hidden_dim,total\n");
    for (int s = 1; s <= 6; ++s) {
      ModelFlags g = f;
      g.setting = s;
      const auto c = g.config();
      const auto sc = c.safd_setting_config();
      std::printf("%d,%d,%d,%d,%d,%d,%zu\n", s, sc.kernel_size, sc.dilation, sc.embed_multiplier, sc.heads,
                  sc.hidden_dim, GDCUnetModel<float>::build(c, 0).parameter_count());
    }
    return 0;
  }
  const auto model = GDCUnetModel<float>::build(f.config(), 0);
  std::printf("layer,kind,parameters\n");
  std::size_t total = 0;
  for (const auto* u : model.units()) {
    const std::size_t n = count_elements(u->parameters());
    total += n;
    std::printf("%s,%s,%zu\n", u->name.c_str(), u->is_safd() ? "safd" : "conv", n);
  }
  std::printf("total,,%zu\n", total);
  return 0;
}

// ---- inspect -----------------------------------------------------------------

struct InspectFlags {
  std::string checkpoint, image, tap, out = "inspect";
  bool list = false;
  std::size_t bins = 64, height = 0, width = 0;
};

template <class T>
int inspect_with(const InspectFlags& f) {
  const auto model = GDCUnetModel<T>::load(f.checkpoint);
  const auto taps = model.tap_names();
  if (f.list || f.tap.empty()) {
    for (const auto& t : taps) std::printf("%s\n", t.c_str());
    if (f.list) return 0;
    throw UsageError("--tap is required (valid taps listed above)");
  }
  if (std::find(taps.begin(), taps.end(), f.tap) == taps.end()) {
    std::string valid;
    for (const auto& t : taps) valid += " " + t;
    throw UsageError("unknown tap '" + f.tap + "'; valid taps:" + valid);
  }
  if (f.image.empty()) throw UsageError("--image is required");
  Image img = read_image(f.image, 3);
  if (f.height && f.width) img = resize_bilinear(img, f.height, f.width);
  model.config().validate_input(img.shape().h, img.shape().w);
  Tensor<T> x(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) x[i] = T(img[i]);
  const Tensor<T> maps = model.extract_feature_maps(x, f.tap);

  fs::create_directories(f.out);
  const Shape s = maps.shape();
  for (std::size_t c = 0; c < s.c; ++c) {
    const std::string stem = f.tap + "_c" + std::to_string(c);
    write_image(normalized_channel(maps, c), (fs::path(f.out) / (stem + ".png")).string());
    std::ofstream hist(fs::path(f.out) / (stem + "_hist.csv"));
    channel_histogram(maps, c, f.bins).write_csv(hist);
  }
  std::printf("tap %s: %zu channels of %zux%zu written to %s\n", f.tap.c_str(), s.c, s.h, s.w, f.out.c_str());
  return 0;
}

int cmd_inspect(const InspectFlags& f) {
  if (f.checkpoint.empty()) throw UsageError("--checkpoint is required");
  return dtype_of(f.checkpoint) == "float64" ? inspect_with<double>(f) : inspect_with<float>(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GDCUnet: U-Net segmentation with SAFD convolutions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  std::function<int()> action;

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints, epoch log and manifest");
  tf.data.attach(train);
  tf.model.attach(train);
  train->add_option("--epochs", tf.epochs, "Schedule length in epochs")->capture_default_str();
  train->add_option("--batch-size", tf.batch, "Images per step")->capture_default_str();
  train->add_option("--lr", tf.lr, "Initial learning rate")->capture_default_str();
  train->add_option("--lr-min", tf.lr_min, "Final learning rate")->capture_default_str();
  train->add_option("--seed", tf.seed, "Seed for initialization and batch order")->capture_default_str();
  train->add_option("--precision", tf.precision, "float32 or float64")
      ->check(CLI::IsMember({"float32", "float64"}))
      ->capture_default_str();
  train->add_option("--target-dice", tf.target_dice, "Stop once test Dice reaches this value");
  train->add_flag("--compare-ablation", tf.compare_ablation,
                  "Repeat the run with the SAFD setting toggled for the same number of epochs");
  train->add_option("--from-manifest", tf.from_manifest, "Repeat the run described by a manifest.json");
  train->add_option("--out", tf.out, "Output directory")->capture_default_str();
  train->add_flag("--quiet", tf.quiet, "Only print the summary");
  train->callback([&] { action = [&] { return cmd_train(tf); }; });

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint and write per-image metrics");
  ef.data.attach(eval);
  eval->add_option("--checkpoint", ef.checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", ef.split, "test, train or all")
      ->check(CLI::IsMember({"test", "train", "all"}))
      ->capture_default_str();
  eval->add_option("--out", ef.out, "Metrics CSV")->capture_default_str();
  eval->add_option("--export-masks", ef.export_masks, "Directory for predicted mask PNGs");
  eval->callback([&] { action = [&] { return cmd_eval(ef); }; });

  std::string scope = "all";
  bool inject = false;
  int instances = 20;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  std::vector<std::string> scopes = gradcheck_scopes();
  scopes.push_back("all");
  gc->add_option("--scope", scope, "Which suite to run")->check(CLI::IsMember(scopes))->capture_default_str();
  gc->add_flag("--inject-fault", inject, "Flip the sign of one backward rule per probe");
  gc->add_option("--instances", instances, "Random instances per probe")->capture_default_str();
  gc->callback([&] { action = [&] { return cmd_gradcheck(scope, inject, instances); }; });

  std::string synth_out = "synthetic";
  std::size_t synth_count = 60, synth_size = 128;
  std::uint64_t synth_seed = 1000;
  auto* syn = app.add_subcommand("synth", "Write a synthetic vessel dataset");
  syn->add_option("--out", synth_out, "Dataset root")->capture_default_str();
  syn->add_option("--count", synth_count, "Number of pairs")->capture_default_str();
  syn->add_option("--size", synth_size, "Image side length")->capture_default_str();
  syn->add_option("--seed", synth_seed, "First seed")->capture_default_str();
  syn->callback([&] { action = [&] { return cmd_synth(synth_out, synth_count, synth_size, synth_seed); }; });

  ModelFlags pf;
  bool all_settings = false;
  auto* params = app.add_subcommand("params", "Print layer-wise parameter counts");
  pf.attach(params);
  params->add_flag("--all-settings", all_settings, "Print the total for every preset");
  params->callback([&] { action = [&] { return cmd_params(pf, all_settings); }; });

  InspectFlags inf;
  auto* ins = app.add_subcommand("inspect", "Export feature maps and histograms of one tap");
  ins->add_option("--checkpoint", inf.checkpoint, "Checkpoint file");
  ins->add_option("--image", inf.image, "Input PNG");
  ins->add_option("--tap", inf.tap, "Tap name");
  ins->add_flag("--list-taps", inf.list, "Print the tap names and exit");
  ins->add_option("--out", inf.out, "Output directory")->capture_default_str();
  ins->add_option("--bins", inf.bins, "Histogram bins")->capture_default_str();
  ins->add_option("--height", inf.height, "Resize the image to this height");
  ins->add_option("--width", inf.width, "Resize the image to this width");
  ins->callback([&] { action = [&] { return cmd_inspect(inf); }; });

  CLI11_PARSE(app, argc, argv);
  try {
    return action();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingFault& e) {
    std::cerr << "training fault: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
