#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "amcl/masking.hpp"

namespace amcl {

inline constexpr int64_t kLatentDim = 128;

/// One (transposed) convolution: output channels, kernel, stride, padding.
struct LayerSpec {
  int64_t out_channels = 1;
  int64_t kernel = 4;
  int64_t stride = 1;
  int64_t padding = 0;

  bool operator==(const LayerSpec&) const = default;
};

/// 128 -> 2048x4x4 -> 1024x8x8 -> 512x16x16 -> 256x32x32 -> 1x64x64.
/// width_divisor shrinks the hidden channel counts; 1 is the reference network.
std::vector<LayerSpec> generator_table_layers(int64_t width_divisor = 1);
/// 1x64x64 -> 32x16x16 -> 64x8x8 -> 128x4x4 -> 1x1x1.
std::vector<LayerSpec> discriminator_table_layers(int64_t width_divisor = 1);

std::string encode_layers(std::span<const LayerSpec> layers);
std::vector<LayerSpec> decode_layers(const std::string& text);

struct GeneratorOptions {
  int64_t latent_dim = kLatentDim;
  std::vector<LayerSpec> layers = generator_table_layers();
  /// 0 gives plain ReLU on the hidden layers.
  double activation_slope = 0.0;
};

struct DiscriminatorOptions {
  std::vector<LayerSpec> layers = discriminator_table_layers();
  double activation_slope = 0.2;
};

/// Transposed-convolution stack: (deconv, batchnorm, rectifier) x (n-1), then deconv + tanh.
class MaskGeneratorImpl : public torch::nn::Module {
 public:
  explicit MaskGeneratorImpl(GeneratorOptions options = {});

  /// z is [B, latent_dim] or [B, latent_dim, 1, 1]; returns [B, 1, H, W] in [-1, 1].
  torch::Tensor forward(const torch::Tensor& z);
  /// Output of every layer after its activation, last entry equals forward(z).
  std::vector<torch::Tensor> forward_trace(const torch::Tensor& z);

  const GeneratorOptions& options() const { return options_; }
  torch::nn::ConvTranspose2d final_layer() const { return deconvs_.back(); }

 private:
  torch::Tensor reshape_latent(const torch::Tensor& z) const;

  GeneratorOptions options_;
  std::vector<torch::nn::ConvTranspose2d> deconvs_;
  std::vector<torch::nn::BatchNorm2d> norms_;
};
TORCH_MODULE(MaskGenerator);

/// Convolution stack: (conv, batchnorm, leaky rectifier) x (n-1), then conv + sigmoid.
class MaskDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit MaskDiscriminatorImpl(DiscriminatorOptions options = {});

  /// x is [B, 1, 64, 64]; returns probabilities [B] in (0, 1).
  torch::Tensor forward(const torch::Tensor& x);
  /// Pre-sigmoid scores [B].
  torch::Tensor logits(const torch::Tensor& x);
  std::vector<torch::Tensor> forward_trace(const torch::Tensor& x);

  const DiscriminatorOptions& options() const { return options_; }
  torch::nn::Conv2d final_layer() const { return convs_.back(); }

 private:
  void check_input(const torch::Tensor& x) const;

  DiscriminatorOptions options_;
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<torch::nn::BatchNorm2d> norms_;
};
TORCH_MODULE(MaskDiscriminator);

/// N(0, 0.02) convolution weights, N(1, 0.02) batchnorm scales, zero biases.
void initialize_dcgan_weights(torch::nn::Module& module);

struct GanTrainConfig {
  int epochs = 50;
  int batch_size = 128;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Masks as a [B, 1, 64, 64] tensor with 0 -> -1 and 1 -> +1.
torch::Tensor masks_to_gan_tensor(std::span<const Mask> masks);

/// Minimax value E log D(x) + E log(1 - D(G(z))).
torch::Tensor gan_value(MaskGeneratorImpl& g, MaskDiscriminatorImpl& d, const torch::Tensor& real,
                        const torch::Tensor& z);

struct GanStepLoss {
  double d_loss = 0.0;  // -(E log D(x) + E log(1 - D(G(z))))
  double g_loss = 0.0;  // -E log D(G(z)), the non-saturating surrogate
};

/// Alternating Adam updates of the discriminator then the generator.
class GanTrainer {
 public:
  GanTrainer(MaskGenerator generator, MaskDiscriminator discriminator, const GanTrainConfig& config);

  GanStepLoss step(const torch::Tensor& real_batch);

  MaskGenerator generator;
  MaskDiscriminator discriminator;

 private:
  GanTrainConfig config_;
  torch::optim::Adam g_optimizer_;
  torch::optim::Adam d_optimizer_;
  torch::Generator noise_;
};

struct GanEpochLoss {
  int epoch = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
};

struct GanTrainResult {
  MaskGenerator generator{nullptr};
  MaskDiscriminator discriminator{nullptr};
  std::vector<GanEpochLoss> trace;
};

/// Flags mode collapse once the discriminator loss has stayed below `threshold` for
/// `patience` consecutive epochs.
class CollapseDetector {
 public:
  explicit CollapseDetector(double threshold = 1e-6, int patience = 3) : threshold_(threshold), patience_(patience) {}
  bool observe(double d_loss);

 private:
  double threshold_;
  int patience_;
  int run_ = 0;
};

using GanProgress = std::function<void(const GanEpochLoss&)>;

/// Trains on the mask corpus; throws ModeCollapseError when the discriminator loss stays
/// below 1e-6 for three consecutive epochs.
GanTrainResult train_gan(std::span<const Mask> corpus, const GanTrainConfig& config,
                         const GeneratorOptions& generator_options = {},
                         const DiscriminatorOptions& discriminator_options = {},
                         const GanProgress& progress = {});

/// Hard threshold at the tanh midpoint: > 0 keeps (1), otherwise occludes (0).
torch::Tensor binarize_mask_field(const torch::Tensor& field);
/// Forward value of binarize_mask_field, identity gradient with respect to `field`.
torch::Tensor straight_through_masks(const torch::Tensor& field);

/// Binarised generator outputs, one Mask per row of zs ([K, latent_dim]). Runs the generator
/// in evaluation mode and restores its previous mode.
std::vector<Mask> sample_masks(MaskGeneratorImpl& generator, const torch::Tensor& zs,
                               int snap_to_patch = 0);

void write_gan_trace_csv(const std::filesystem::path& path, std::span<const GanEpochLoss> trace);

void save_generator(const std::filesystem::path& path, MaskGeneratorImpl& generator);
MaskGenerator load_generator(const std::filesystem::path& path,
                             const GeneratorOptions* expected = nullptr);
void save_discriminator(const std::filesystem::path& path, MaskDiscriminatorImpl& discriminator);
MaskDiscriminator load_discriminator(const std::filesystem::path& path,
                                     const DiscriminatorOptions* expected = nullptr);

}  // namespace amcl
