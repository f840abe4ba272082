#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amcl/image.hpp"
#include "amcl/masking.hpp"

namespace amcl {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool fixed_unit_range = false;  // both axes [0, 1], e.g. ROC
};

void write_line_plot(const std::filesystem::path& path, const LinePlot& plot);

constexpr int kGalleryCols = 8;
constexpr int kGalleryRows = 8;
constexpr int kGalleryMargin = 8;
constexpr int kGalleryGap = 4;

/// Pixel size of a rows x cols gallery of 64x64 tiles.
std::pair<int, int> gallery_dimensions(int rows = kGalleryRows, int cols = kGalleryCols);

/// 8x8 tiles: rows alternate between 8 masks and the same 8 masks applied to `images`.
/// Needs 32 masks; images are reused cyclically.
void write_mask_gallery(const std::filesystem::path& path, std::span<const Mask> masks, std::span<const Image> images);

struct PlotReport {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> missing;
};

/// Renders every plot whose inputs exist under output_dir into output_dir/plots and lists the
/// inputs that were absent.
PlotReport emit_plots(const std::filesystem::path& output_dir);

}  // namespace amcl
