#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "amcl/image.hpp"

namespace amcl {

/// Session 1 images train, session 2 images test.
struct DatasetSplit {
  std::vector<Image> train;
  std::vector<Image> test;
  int num_classes = 0;

  /// Checks image invariants, session convention and test-classes-in-train.
  void validate(int train_session = 1, int test_session = 2) const;
};

struct SyntheticVeinConfig {
  int num_classes = 20;
  int images_per_class_per_session = 5;
  int vessel_count_min = 4;
  int vessel_count_max = 7;
  double vessel_width_min = 1.5;
  double vessel_width_max = 3.5;
  double noise_level = 0.02;
  std::uint64_t seed = 42;

  // Intra-class jitter (per image).
  double max_rotation_rad = 0.05;
  double max_shift_px = 1.5;
  double max_scale_delta = 0.03;
  double max_brightness_delta = 0.04;
  // Inter-session drift (per class and session).
  double session_brightness_delta = 0.08;
  double session_contrast_delta = 0.15;

  void validate() const;
};

/// Quadratic Bezier vessel in pixel coordinates.
struct VesselStroke {
  std::array<double, 2> p0{};
  std::array<double, 2> p1{};
  std::array<double, 2> p2{};
  double width = 2.0;
  double depth = 0.3;
};

/// Fixed per-class appearance all images of the class are rendered from.
struct IdentityTemplate {
  double background = 0.65;
  std::vector<VesselStroke> strokes;
};

struct ImageJitter {
  double rotation = 0.0;  // radians, about the image centre
  double dx = 0.0;
  double dy = 0.0;
  double scale = 1.0;
  double brightness = 0.0;
};

/// Global photometric drift of one capture session: v -> gain * (v - 0.5) + 0.5 + offset.
struct SessionShift {
  double gain = 1.0;
  double offset = 0.0;
};

struct RenderRecord {
  int class_id = 0;
  int session_id = 1;
  ImageJitter jitter;
};

struct SyntheticDataset {
  DatasetSplit split;
  std::vector<IdentityTemplate> templates;
  std::vector<std::array<SessionShift, 2>> sessions;
  std::vector<RenderRecord> train_log;
  std::vector<RenderRecord> test_log;
};

IdentityTemplate make_identity_template(const SyntheticVeinConfig& config, std::mt19937_64& rng);

/// Deterministic rasterisation; noise_rng is only consumed when noise_level > 0.
Image render_vein_image(const IdentityTemplate& identity, const ImageJitter& jitter,
                        const SessionShift& session, double noise_level,
                        std::mt19937_64& noise_rng);

SyntheticDataset generate_synthetic_dataset_detailed(const SyntheticVeinConfig& config);
DatasetSplit generate_synthetic_dataset(const SyntheticVeinConfig& config);

std::string to_key_value_text(const SyntheticVeinConfig& config);
SyntheticVeinConfig synthetic_config_from_text(const std::string& text);

struct DirectoryLayout {
  int train_session = 1;
  int test_session = 2;
};

/// Reads root/class_<id>/session_<s>/<name>.{png,pgm}. Class ids are remapped to 0..C-1
/// in ascending order of <id>.
DatasetSplit load_image_directory(const std::filesystem::path& root,
                                  const DirectoryLayout& layout = {});

/// Writes a split in the layout load_image_directory reads, as 8-bit PNG.
void save_image_directory(const DatasetSplit& split, const std::filesystem::path& root,
                          const DirectoryLayout& layout = {});

/// Loads any 8/16-bit grayscale or colour image file as a 64x64 [0,1] image.
Image load_image_file(const std::filesystem::path& path);

}  // namespace amcl
