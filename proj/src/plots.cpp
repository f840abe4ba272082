#include "amcl/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "amcl/datasets.hpp"
#include "amcl/errors.hpp"
#include "amcl/evalkit.hpp"

namespace amcl {

namespace {

const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
                               {189, 103, 148}, {75, 86, 140}, {194, 119, 227}, {127, 127, 127}};

std::string tick_label(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

void write_png(const std::filesystem::path& path, const cv::Mat& image) {
  std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), image)) throw IoError("cannot write " + path.string());
}

}  // namespace

void write_line_plot(const std::filesystem::path& path, const LinePlot& plot) {
  const int width = 720, height = 480;
  const int left = 80, right = 20, top = 40, bottom = 60;
  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : plot.series) {
    if (s.x.size() != s.y.size()) throw ContractViolation("series x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (plot.fixed_unit_range || !std::isfinite(xmin)) {
    xmin = ymin = 0.0;
    xmax = ymax = 1.0;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pad = plot.fixed_unit_range ? 0.0 : 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const int pw = width - left - right, ph = height - top - bottom;
  auto to_px = [&](double x, double y) {
    return cv::Point(left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * pw)),
                     top + ph - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * ph)));
  };

  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  const cv::Scalar black(0, 0, 0), grid(225, 225, 225);
  for (int i = 0; i <= 5; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 5.0;
    const double fy = ymin + (ymax - ymin) * i / 5.0;
    const auto px = to_px(fx, ymin), py = to_px(xmin, fy);
    cv::line(canvas, {px.x, top}, {px.x, top + ph}, grid, 1);
    cv::line(canvas, {left, py.y}, {left + pw, py.y}, grid, 1);
    cv::putText(canvas, tick_label(fx), {px.x - 15, top + ph + 18}, font, 0.4, black, 1, cv::LINE_AA);
    cv::putText(canvas, tick_label(fy), {5, py.y + 4}, font, 0.4, black, 1, cv::LINE_AA);
  }
  cv::rectangle(canvas, {left, top}, {left + pw, top + ph}, black, 1);
  cv::putText(canvas, plot.title, {left + pw / 2 - 40, 18}, font, 0.6, black, 1, cv::LINE_AA);
  cv::putText(canvas, plot.x_label, {left + pw / 2 - 40, height - 15}, font, 0.5, black, 1, cv::LINE_AA);
  cv::putText(canvas, plot.y_label, {5, top - 8}, font, 0.45, black, 1, cv::LINE_AA);

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const auto color = kPalette[k % std::size(kPalette)];
    std::vector<cv::Point> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.push_back(to_px(s.x[i], s.y[i]));
    }
    if (pts.size() == 1) cv::circle(canvas, pts[0], 3, color, cv::FILLED, cv::LINE_AA);
    if (pts.size() > 1) cv::polylines(canvas, pts, false, color, 2, cv::LINE_AA);
    const int ly = top + 15 + 18 * static_cast<int>(k);
    cv::line(canvas, {left + pw - 150, ly - 4}, {left + pw - 125, ly - 4}, color, 2, cv::LINE_AA);
    cv::putText(canvas, s.label, {left + pw - 120, ly}, font, 0.45, black, 1, cv::LINE_AA);
  }
  write_png(path, canvas);
}

std::pair<int, int> gallery_dimensions(int rows, int cols) {
  return {2 * kGalleryMargin + cols * kImageSide + (cols - 1) * kGalleryGap,
          2 * kGalleryMargin + rows * kImageSide + (rows - 1) * kGalleryGap};
}

void write_mask_gallery(const std::filesystem::path& path, std::span<const Mask> masks, std::span<const Image> images) {
  const std::size_t needed = kGalleryRows / 2 * kGalleryCols;
  if (masks.size() < needed) throw ContractViolation("gallery needs " + std::to_string(needed) + " masks");
  if (images.empty()) throw ContractViolation("gallery needs at least one image");
  const auto [w, h] = gallery_dimensions();
  cv::Mat canvas(h, w, CV_8UC1, cv::Scalar(128));
  for (int row = 0; row < kGalleryRows; ++row) {
    for (int col = 0; col < kGalleryCols; ++col) {
      const std::size_t idx = static_cast<std::size_t>(row / 2 * kGalleryCols + col);
      const Mask& m = masks[idx];
      const Image shown = row % 2 == 0 ? Image{} : apply_mask(images[idx % images.size()], m);
      cv::Mat tile(kImageSide, kImageSide, CV_8UC1);
      for (int r = 0; r < kImageSide; ++r) {
        for (int c = 0; c < kImageSide; ++c) {
          const auto i = static_cast<std::size_t>(r * kImageSide + c);
          const double v = row % 2 == 0 ? m.grid[i] : shown.pixels[i];
          tile.at<unsigned char>(r, c) = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
      }
      const int x = kGalleryMargin + col * (kImageSide + kGalleryGap);
      const int y = kGalleryMargin + row * (kImageSide + kGalleryGap);
      tile.copyTo(canvas(cv::Rect(x, y, kImageSide, kImageSide)));
    }
  }
  write_png(path, canvas);
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

Series roc_series(const std::string& label, const std::filesystem::path& report_path) {
  const auto report = read_report_json(report_path);
  Series s{label, {}, {}};
  for (const auto& p : report.roc) {
    s.x.push_back(p.far);
    s.y.push_back(p.gar);
  }
  return s;
}

}  // namespace

PlotReport emit_plots(const std::filesystem::path& output_dir) {
  namespace fs = std::filesystem;
  PlotReport report;
  const fs::path plots = output_dir / "plots";

  const fs::path gan_csv = output_dir / "gan" / "loss.csv";
  if (fs::exists(gan_csv)) {
    LinePlot p{"GAN training loss", "epoch", "loss", {{"D", {}, {}}, {"G", {}, {}}}};
    for (const auto& r : read_csv(gan_csv)) {
      const double e = std::stod(r.at(0));
      p.series[0].x.push_back(e);
      p.series[0].y.push_back(std::stod(r.at(1)));
      p.series[1].x.push_back(e);
      p.series[1].y.push_back(std::stod(r.at(2)));
    }
    write_line_plot(plots / "gan_loss.png", p);
    report.written.push_back(plots / "gan_loss.png");
  } else {
    report.missing.push_back(gan_csv.string());
  }

  const fs::path gallery = output_dir / "gan" / "gallery_masks.txt";
  const fs::path data = output_dir / "data";
  if (fs::exists(gallery) && fs::exists(data)) {
    const auto masks = load_mask_corpus(gallery);
    const auto split = load_image_directory(data);
    write_mask_gallery(plots / "mask_gallery.png", masks, split.train);
    report.written.push_back(plots / "mask_gallery.png");
  } else {
    if (!fs::exists(gallery)) report.missing.push_back(gallery.string());
    if (!fs::exists(data)) report.missing.push_back(data.string());
  }

  const fs::path history = output_dir / "pretrain" / "loss_history.csv";
  if (fs::exists(history)) {
    LinePlot p{"Pretraining loss", "epoch", "loss", {{"encoder", {}, {}}, {"latent", {}, {}}}};
    for (const auto& r : read_csv(history)) {
      auto& s = r.at(1) == "encoder" ? p.series[0] : p.series[1];
      s.x.push_back(std::stod(r.at(0)));
      s.y.push_back(std::stod(r.at(3)));
    }
    if (p.series[1].x.empty()) p.series.pop_back();
    write_line_plot(plots / "pretrain_loss.png", p);
    report.written.push_back(plots / "pretrain_loss.png");
  } else {
    report.missing.push_back(history.string());
  }

  const fs::path tune = output_dir / "finetune" / "loss.csv";
  if (fs::exists(tune)) {
    LinePlot p{"Fine-tuning loss", "epoch", "cross-entropy", {{"train", {}, {}}}};
    for (const auto& r : read_csv(tune)) {
      p.series[0].x.push_back(std::stod(r.at(0)));
      p.series[0].y.push_back(std::stod(r.at(1)));
    }
    write_line_plot(plots / "finetune_loss.png", p);
    report.written.push_back(plots / "finetune_loss.png");
  } else {
    report.missing.push_back(tune.string());
  }

  LinePlot roc{"ROC", "false accept rate", "genuine accept rate", {}, true};
  const fs::path eval_report = output_dir / "eval" / "report.json";
  if (fs::exists(eval_report)) {
    std::string label = "eval";
    if (std::ifstream in(output_dir / "eval" / "mode.txt"); in) std::getline(in, label);
    roc.series.push_back(roc_series(label, eval_report));
  }
  for (const char* mode : {"scratch", "simclr", "amcl"}) {
    const fs::path p = output_dir / "compare" / (std::string("report_") + mode + ".json");
    if (fs::exists(p)) roc.series.push_back(roc_series(std::string("compare ") + mode, p));
  }
  if (!roc.series.empty()) {
    write_line_plot(plots / "roc.png", roc);
    report.written.push_back(plots / "roc.png");
  } else {
    report.missing.push_back(eval_report.string());
  }
  return report;
}

}  // namespace amcl
