#pragma once

#include <cstdint>
#include <span>

#include <torch/torch.h>

#include "amcl/augment.hpp"
#include "amcl/encoder.hpp"
#include "amcl/gan.hpp"

namespace amcl {

struct ContrastiveLossOptions {
  double temperature = 1.0;
  /// false sums the denominator over j != i only; true is canonical NT-Xent.
  bool include_positive_in_denominator = false;
};

/// Knobs of contrastive and adversarial pretraining.
struct ContrastiveConfig {
  int batch_size = 16;           // N
  double temperature = 1.0;      // tau
  bool include_positive_in_denominator = false;
  double lambda_reg = 0.5;       // weight of the pixel-space cosine regulariser
  double alpha = 1e-2;           // encoder SGD step
  double beta = 1e-1;            // latent ascent step
  int epochs = 50;
  int t1 = 1;                    // encoder steps per epoch
  int t2 = 1;                    // latent steps per epoch
  int latent_set_size = 0;       // K; 0 means K = N
  bool fixed_pool = false;       // round-robin assignment over a K-member pool
  double latent_norm_cap = 3.0 * 11.313708498984761;  // 3 * sqrt(128)
  AugmentationPolicy augmentation;
  EncoderOptions encoder;
  std::uint64_t seed = 0;

  void validate() const;
  int latent_set_k() const { return latent_set_size > 0 ? latent_set_size : batch_size; }
  ContrastiveLossOptions loss_options() const { return {temperature, include_positive_in_denominator}; }
};

/// u.v / (|u||v|); 0 (with a warning on stderr) when either vector is zero.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Row-wise cosine similarities [N, M]; zero rows give 0.
torch::Tensor cosine_similarity_matrix(const torch::Tensor& a, const torch::Tensor& b);

/// Mean over anchors of -log(exp(S(a_i,b_i)/tau) / sum_j exp(S(a_i,b_j)/tau)), evaluated in
/// double precision. Needs N >= 2.
torch::Tensor contrastive_loss(const torch::Tensor& anchors, const torch::Tensor& positives,
                               const ContrastiveLossOptions& options);

/// Plain loss on image tensors [N, 1, 64, 64].
torch::Tensor simclr_loss(const torch::Tensor& anchor_views, const torch::Tensor& positive_views,
                          EncoderImpl& encoder, const ContrastiveLossOptions& options);
/// Uses view_a_masked as anchors when present.
torch::Tensor simclr_loss(const ViewBatch& views, EncoderImpl& encoder, const ContrastiveLossOptions& options);

/// Generator output pushed through the straight-through binariser, with the generator held in
/// evaluation mode (restored afterwards).
torch::Tensor generate_masks(MaskGeneratorImpl& generator, const torch::Tensor& zs);

struct MaskedLoss {
  torch::Tensor loss;
  torch::Tensor masks;         // [N, 1, 64, 64], hard values, straight-through gradient
  torch::Tensor masked_views;  // view_a * masks
};

/// Anchors are E(view_a * binarize(G(z_i))); differentiable in the encoder and in zs.
MaskedLoss masked_simclr_loss(const torch::Tensor& view_a, const torch::Tensor& view_b, const torch::Tensor& zs,
                              EncoderImpl& encoder, MaskGeneratorImpl& generator,
                              const ContrastiveLossOptions& options);
/// Fills views.view_a_masked and returns the loss.
torch::Tensor masked_simclr_loss(ViewBatch& views, const torch::Tensor& zs, EncoderImpl& encoder,
                                 MaskGeneratorImpl& generator, const ContrastiveLossOptions& options);

}  // namespace amcl
