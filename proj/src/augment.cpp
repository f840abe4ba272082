#include "amcl/augment.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "amcl/errors.hpp"

namespace amcl {

namespace {

bool in_unit(double p) { return p >= 0.0 && p <= 1.0; }

cv::Mat to_mat(const Image& image) {
  cv::Mat mat(kImageSide, kImageSide, CV_32F);
  std::copy(image.pixels.begin(), image.pixels.end(), mat.ptr<float>());
  return mat;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool coin(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

}  // namespace

void AugmentationPolicy::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw ContractViolation("crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!in_unit(flip_prob) || !in_unit(blur_prob) || !in_unit(grayscale_prob)) {
    throw ContractViolation("augmentation probabilities must lie in [0, 1]");
  }
  if (!(jitter_strength >= 0.0)) throw ContractViolation("jitter_strength must be non-negative");
}

AugmentationPolicy AugmentationPolicy::identity() {
  AugmentationPolicy p;
  p.crop_scale_min = 1.0;
  p.crop_scale_max = 1.0;
  p.flip_prob = 0.0;
  p.jitter_strength = 0.0;
  p.blur_prob = 0.0;
  p.grayscale_prob = 0.0;
  return p;
}

Image augment_image(const Image& image, const AugmentationPolicy& policy, std::mt19937_64& rng) {
  policy.validate();
  cv::Mat mat = to_mat(image);

  const double scale = uniform(rng, policy.crop_scale_min, policy.crop_scale_max);
  if (scale < 1.0) {
    const double log_ratio = uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const double ratio = std::exp(log_ratio);
    const double area = scale * kImagePixels;
    const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * ratio))), 1, kImageSide);
    const int h = std::clamp(static_cast<int>(std::lround(std::sqrt(area / ratio))), 1, kImageSide);
    const int x0 = std::uniform_int_distribution<int>(0, kImageSide - w)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, kImageSide - h)(rng);
    cv::Mat resized;
    cv::resize(mat(cv::Rect(x0, y0, w, h)), resized, cv::Size(kImageSide, kImageSide), 0, 0, cv::INTER_LINEAR);
    mat = resized;
  }

  if (coin(rng, policy.flip_prob)) {
    cv::Mat flipped;
    cv::flip(mat, flipped, 1);
    mat = flipped;
  }

  if (policy.jitter_strength > 0.0) {
    const double s = policy.jitter_strength;
    const double brightness = uniform(rng, std::max(0.0, 1.0 - s), 1.0 + s);
    const double contrast = uniform(rng, std::max(0.0, 1.0 - s), 1.0 + s);
    mat *= brightness;
    const double mean = cv::mean(mat)[0];
    mat = (mat - mean) * contrast + mean;
  }

  if (coin(rng, policy.blur_prob)) {
    const double sigma = uniform(rng, 0.1, 1.5);
    cv::Mat blurred;
    cv::GaussianBlur(mat, blurred, cv::Size(5, 5), sigma, sigma, cv::BORDER_REFLECT_101);
    mat = blurred;
  }

  Image out;
  out.class_id = image.class_id;
  out.session_id = image.session_id;
  const float* src = mat.ptr<float>();
  for (int i = 0; i < kImagePixels; ++i) out.pixels[static_cast<std::size_t>(i)] = std::clamp(src[i], 0.0f, 1.0f);
  return out;
}

void ViewBatch::validate() const {
  const auto n = originals.size();
  if (view_a.size() != n || view_b.size() != n || (view_a_masked && view_a_masked->size() != n)) {
    throw ContractViolation("view batch collections are not index-aligned");
  }
}

ViewBatch augment_views(std::span<const Image> batch, const AugmentationPolicy& policy, std::mt19937_64& rng) {
  ViewBatch views;
  views.originals.assign(batch.begin(), batch.end());
  views.view_a.reserve(batch.size());
  views.view_b.reserve(batch.size());
  for (const Image& image : batch) {
    views.view_a.push_back(augment_image(image, policy, rng));
    views.view_b.push_back(augment_image(image, policy, rng));
  }
  return views;
}

}  // namespace amcl
