#include "amcl/image.hpp"

#include <cmath>
#include <string>

#include "amcl/errors.hpp"

namespace amcl {

void validate_image(const Image& image) {
  if (image.pixels.size() != static_cast<std::size_t>(kImagePixels)) {
    throw ContractViolation("image must be 64x64, got " + std::to_string(image.pixels.size()) +
                            " pixels");
  }
  for (float v : image.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ContractViolation("image intensity outside [0, 1]: " + std::to_string(v));
    }
  }
}

torch::Tensor images_to_tensor(std::span<const Image> images) {
  auto out = torch::empty({static_cast<int64_t>(images.size()), 1, kImageSide, kImageSide},
                          torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const Image& image : images) {
    if (image.pixels.size() != static_cast<std::size_t>(kImagePixels)) {
      throw ContractViolation("image must be 64x64");
    }
    std::copy(image.pixels.begin(), image.pixels.end(), dst);
    dst += kImagePixels;
  }
  return out;
}

Image tensor_to_image(const torch::Tensor& tensor, int class_id, int session_id) {
  if (tensor.numel() != kImagePixels) {
    throw ContractViolation("tensor does not hold a 64x64 image");
  }
  auto flat = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous().view({-1});
  Image image;
  image.class_id = class_id;
  image.session_id = session_id;
  std::copy(flat.data_ptr<float>(), flat.data_ptr<float>() + kImagePixels, image.pixels.begin());
  return image;
}

}  // namespace amcl
