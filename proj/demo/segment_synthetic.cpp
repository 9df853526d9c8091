// SPDX-License-Identifier: Apache-2.0
// Trains a small GDCUnet on synthetic vessel images and writes the input,
// ground truth and prediction of the first test image as PNGs.
//   segment_synthetic [out_dir] [epochs]
#include <cstdio>
#include <filesystem>
#include <string>

#include "gdcunet/train.hpp"

using namespace gdc;

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "demo_out";
  const int epochs = argc > 2 ? std::stoi(argv[2]) : 60;

  SynthConfig sc;
  sc.height = sc.width = 64;
  const auto data = synthetic_dataset(12, 3, sc);

  GDCUnetConfig mc;
  mc.depth = 4;
  mc.safd_setting = 3;
  auto model = GDCUnetModel<float>::build(mc, 1);
  std::printf("%zu parameters, %zu SAFD convolutions\n", model.parameter_count(), model.safd_unit_count());

  TrainConfig tc;
  tc.total_epochs = epochs;
  tc.batch_size = 2;
  train(model, data, tc, [](const EpochRecord& r) {
    std::printf("epoch %3d  lr %.2e  loss %.4f  test IoU %.4f  Dice %.4f\n", r.epoch, r.lr, r.train_loss,
                r.test.iou, r.test.dice);
    return true;
  });

  std::filesystem::create_directories(out);
  const auto& sample = data.test.front();
  const auto pred = predict(model, sample);
  write_image(sample.image, (out / "image.png").string());
  write_mask(sample.mask, (out / "truth.png").string());
  write_mask(pred, (out / "prediction.png").string());
  const auto m = evaluate_masks(pred, sample.mask);
  std::printf("%s: Dice %.4f, IoU %.4f -> %s\n", sample.id.c_str(), m.dice, m.iou, out.string().c_str());
}
