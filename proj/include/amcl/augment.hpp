#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "amcl/image.hpp"

namespace amcl {

/// Classical view augmentations: random resized crop, horizontal flip, brightness/contrast
/// jitter and Gaussian blur.
struct AugmentationPolicy {
  double crop_scale_min = 0.6;  // area fraction
  double crop_scale_max = 1.0;
  double flip_prob = 0.5;
  double jitter_strength = 0.3;
  double blur_prob = 0.3;
  /// Kept for parity with colour pipelines; a no-op on single-channel images.
  double grayscale_prob = 0.0;

  void validate() const;
  static AugmentationPolicy identity();
};

Image augment_image(const Image& image, const AugmentationPolicy& policy, std::mt19937_64& rng);

/// Index-aligned views: (view_a_masked[i] or view_a[i], view_b[i]) is the positive pair of
/// image i; every cross-index pair is negative.
struct ViewBatch {
  std::vector<Image> originals;
  std::vector<Image> view_a;
  std::vector<Image> view_b;
  std::optional<std::vector<Image>> view_a_masked;

  std::size_t size() const { return originals.size(); }
  /// Throws ContractViolation when the collections are not index-aligned.
  void validate() const;
  /// view_a_masked when present, otherwise view_a.
  const std::vector<Image>& anchors() const { return view_a_masked ? *view_a_masked : view_a; }
};

/// Two independent augmentations per image, deterministic in `rng`.
ViewBatch augment_views(std::span<const Image> batch, const AugmentationPolicy& policy, std::mt19937_64& rng);

}  // namespace amcl
