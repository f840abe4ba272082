#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "amcl/image.hpp"

namespace amcl {

/// Binary 64x64 occlusion grid: 1 keeps a pixel, 0 occludes it.
struct Mask {
  std::vector<std::uint8_t> grid = std::vector<std::uint8_t>(kImagePixels, 1);
  /// Side of the aligned blocks the grid is constant on; 1 when no alignment is claimed.
  int patch_size = 1;

  std::uint8_t at(int row, int col) const { return grid[static_cast<std::size_t>(row * kImageSide + col)]; }

  /// Fraction of occluded pixels (zeros / 4096).
  double ratio() const;
  bool is_patch_aligned(int block) const;
  bool is_patch_aligned() const { return is_patch_aligned(patch_size); }
  int occluded_patches() const;

  /// Row-major patch keep-bits (P x P); requires patch alignment.
  std::vector<std::uint8_t> patch_bitmap() const;
  static Mask from_patch_bitmap(int patch_size, std::span<const std::uint8_t> keep);

  static Mask all_ones(int patch_size = 1);
  static Mask all_zeros(int patch_size = 1);

  bool operator==(const Mask&) const = default;
};

struct MaskSamplerConfig {
  int patch_size = 16;
  double ratio_min = 0.20;
  double ratio_max = 0.80;
  std::size_t corpus_size = 100000;
  std::uint64_t seed = 0;

  void validate() const;
  int patches_per_side() const { return kImageSide / patch_size; }
};

/// round(ratio * patch_count) with ties rounding half-up.
int occluded_patch_count(double ratio, int patch_count);

Mask sample_mask(const MaskSamplerConfig& config, std::mt19937_64& rng);

/// corpus_size independent draws from a generator seeded by config.seed.
std::vector<Mask> build_mask_corpus(const MaskSamplerConfig& config);

/// Header `AMCL-MASKS v1 <patch_size> <count>`, then one hex patch bitmap per line.
void save_mask_corpus(const std::filesystem::path& path, std::span<const Mask> masks);
std::vector<Mask> load_mask_corpus(const std::filesystem::path& path);
/// Samples straight to disk without holding the corpus; same bytes as
/// save_mask_corpus(build_mask_corpus(config)). Returns the record count.
std::size_t write_mask_corpus(const std::filesystem::path& path, const MaskSamplerConfig& config);
/// Streams records to `visit(index, mask)`; returns the record count.
std::size_t for_each_mask_record(const std::filesystem::path& path,
                                 const std::function<void(std::size_t, const Mask&)>& visit);

/// Hadamard product; metadata of `image` is preserved.
Image apply_mask(const Image& image, const Mask& mask);

/// Majority vote per aligned block (ties keep).
Mask snap_to_grid(const Mask& mask, int patch_size);

}  // namespace amcl
