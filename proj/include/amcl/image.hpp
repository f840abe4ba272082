#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

namespace amcl {

inline constexpr int kImageSide = 64;
inline constexpr int kImagePixels = kImageSide * kImageSide;

/// Grayscale 64x64 image, row-major, intensities in [0, 1].
struct Image {
  std::vector<float> pixels = std::vector<float>(kImagePixels, 0.0f);
  int class_id = 0;
  int session_id = 1;

  float& at(int row, int col) { return pixels[static_cast<std::size_t>(row * kImageSide + col)]; }
  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row * kImageSide + col)]; }
};

/// Throws ContractViolation when the pixel buffer is not 64x64 or leaves [0, 1].
void validate_image(const Image& image);

/// Stacks images into an [N, 1, 64, 64] float tensor.
torch::Tensor images_to_tensor(std::span<const Image> images);

/// Inverse of images_to_tensor for one [1, 64, 64] or [64, 64] slice.
Image tensor_to_image(const torch::Tensor& tensor, int class_id = 0, int session_id = 1);

}  // namespace amcl
