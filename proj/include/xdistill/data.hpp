#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xdistill/tensor.hpp"

namespace xdistill {

// Images (N, c, h, w) with pixel values in [0, 1] and one class index per image.
struct Dataset {
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  void validate() const;
};

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);
std::vector<std::size_t> class_histogram(const Dataset& ds);

// (n, classes, 1, 1) probability rows.
Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

// IDX: big-endian u32 magic 0x00000803 (n, h, w) or 0x00000804 (n, c, h, w)
// for unsigned-byte images, 0x00000801 for labels; pixels are scaled by 1/255.
Dataset parse_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels,
                  std::size_t num_classes = 0);
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t num_classes = 0);
// Pixels are stored as round(255 * v).
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_idx(const Dataset& ds);
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

struct SynthSpec {
  std::size_t num_classes = 10;
  std::size_t per_class = 100;
  std::size_t c = 1, h = 16, w = 16;
  double noise = 0.5;        // per-pixel Gaussian noise standard deviation
  std::uint64_t seed = 1;    // fixes the class templates
  std::uint64_t draw = 0;    // selects an independent sample draw from the same templates
};

// Class templates are smooth sums of Gaussian bumps, rescaled into [0.15, 0.85];
// a sample is its class template plus seeded pixel noise, clamped to [0, 1].
// Samples are ordered class-major.
Dataset synth_blobs(const SynthSpec& spec);
Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t c, std::size_t h,
                    std::size_t w, std::uint64_t seed);
// The noiseless templates, (num_classes, c, h, w).
Tensor synth_templates(const SynthSpec& spec);

// Exactly K instances per class. Class lists (in dataset order) are shuffled in
// ascending class order by one std::mt19937_64(seed) via std::shuffle, and the
// first K of each are taken. Output is class-major.
Dataset kshot_sample(const Dataset& ds, std::size_t k, std::uint64_t seed);

struct SoftBatch {
  Tensor x;
  Tensor targets;  // (n, classes, 1, 1) probability rows
};

SoftBatch to_soft_batch(const Dataset& ds);

// Pairs every sample with a partner from a seeded cyclic permutation (no
// self-pairs when n >= 2) and interpolates inputs and targets with weight lambda.
SoftBatch mixup(const SoftBatch& batch, double lambda, std::uint64_t seed);
// lambda ~ Beta(0.2, 0.2).
double draw_mixup_lambda(std::uint64_t seed);
// h + N(0, (scale * max(h))^2) elementwise.
Tensor gaussian_feature_noise(const Tensor& h, double scale, std::uint64_t seed);
// Zero-pads by `pad` and crops the original extent at a seeded per-sample offset.
Tensor random_crop(const Tensor& x, std::size_t pad, std::uint64_t seed);

}  // namespace xdistill
