#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dssd/anchors.hpp"
#include "dssd/tensor.hpp"

namespace dssd {

using Rng = std::mt19937_64;

enum class ShapeClass { kCircle = 1, kSquare = 2, kTriangle = 3 };
std::string_view to_string(ShapeClass c);

/// One image with its ground truths. Boxes are normalized to [0, 1].
struct Sample {
  Tensor image;  // (1, 3, H, W), values in [0, 1]
  std::vector<GroundTruth> gts;
  std::uint64_t seed = 0;
};

struct SceneSpec {
  int image_size = 64;
  int num_objects = 2;
  double min_size = 0.2;  // object side as a fraction of the image side
  double max_size = 0.45;
  double aspect_jitter = 0.3;  // |log(W/H)| bound
  int num_classes = 3;         // foreground classes drawn from ShapeClass
};

/// Renders non-overlapping shapes on a textured background. Pixel values are
/// multiples of 1/255 so the sample survives a PPM round trip unchanged.
/// Throws SpecError when an object cannot be placed after 100 attempts.
Sample gen_scene(std::uint64_t seed, const SceneSpec& spec);

/// Derives the seed of sample `index` from a dataset seed.
std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index);
std::vector<Sample> gen_dataset(std::uint64_t seed, std::size_t count, const SceneSpec& spec);

struct AugmentConfig {
  double expand_prob = 0.5;
  double max_expand_ratio = 4.0;
  // Negative entries stand for "full" (keep the whole image); 0 for an
  // unconstrained patch; otherwise the minimum IoU between patch and a gt.
  std::vector<double> crop_modes{-1.0, 0.0, 0.1, 0.3, 0.5, 0.7, 0.9};
  int crop_attempts = 50;
  double crop_min_scale = 0.3;
  double flip_prob = 0.5;
  double brightness = 0.125;
  double contrast_lo = 0.5;
  double contrast_hi = 1.5;
  double saturation_lo = 0.5;
  double saturation_hi = 1.5;
  double hue = 0.05;  // fraction of the full hue circle
  double photometric_prob = 0.5;

  void validate() const;
};

/// Places the image at pixel offset (left, top) on a canvas `ratio` times
/// larger filled with the image's mean color.
Sample expand_with(const Sample& s, double ratio, int left, int top);
Sample expand(const Sample& s, Rng& rng, const AugmentConfig& cfg);

/// Crops pixel rectangle [x0, x1) x [y0, y1). Keeps gts whose centers fall
/// inside and clamps them to the patch.
Sample crop_to(const Sample& s, int x0, int y0, int x1, int y1);
Sample random_crop(const Sample& s, Rng& rng, const AugmentConfig& cfg);

Sample flip_horizontal(const Sample& s);
Sample flip(const Sample& s, Rng& rng, double prob = 0.5);

/// Brightness, contrast, saturation and hue jitter, each applied with
/// `photometric_prob`. Ground truths are untouched.
Sample photometric(const Sample& s, Rng& rng, const AugmentConfig& cfg);

/// Bilinear resample (half-pixel centers) to size x size.
Sample resize_square(const Sample& s, int size);

/// expand -> crop -> resize -> flip -> photometric, driven by `seed` alone.
Sample augment(const Sample& s, std::uint64_t seed, const AugmentConfig& cfg, int out_size);

/// Stacks (1,3,H,W) images of equal size into one (N,3,H,W) batch.
Tensor stack_images(const std::vector<const Sample*>& samples);

// --- on-disk format ----------------------------------------------------------

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

/// Writes images/NNNN.ppm and annotations.jsonl under `dir`.
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
/// Accepts either the dataset directory or its annotations.jsonl.
std::vector<Sample> load_dataset(const std::filesystem::path& dir_or_jsonl);
/// Reads only the boxes of an annotations.jsonl file.
std::vector<std::vector<GroundTruth>> load_annotations(const std::filesystem::path& jsonl);

}  // namespace dssd
