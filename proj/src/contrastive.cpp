#include "amcl/contrastive.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "amcl/errors.hpp"
#include "amcl/masking.hpp"

namespace amcl {

void ContrastiveConfig::validate() const {
  if (batch_size < 2) throw ConfigError("contrastive batch_size must be at least 2");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  if (!(lambda_reg >= 0)) throw ConfigError("lambda must be non-negative");
  if (!(alpha >= 0) || !(beta >= 0)) throw ConfigError("alpha and beta must be non-negative");
  if (epochs < 0 || t1 < 1 || t2 < 1) throw ConfigError("epochs must be >= 0 and T1, T2 >= 1");
  if (latent_set_size < 0) throw ConfigError("latent_set_size must be non-negative");
  if (!fixed_pool && latent_set_size > 0 && latent_set_size < batch_size) {
    throw ConfigError("latent_set_size must be >= batch_size unless fixed_pool is set");
  }
  if (!(latent_norm_cap > 0)) throw ConfigError("latent_norm_cap must be positive");
  try {
    augmentation.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ContractViolation("cosine_similarity: dimension mismatch");
  double dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) {
    std::cerr << "warning: cosine similarity with a zero vector, using 0\n";
    return 0.0;
  }
  return dot / (std::sqrt(uu) * std::sqrt(vv));
}

torch::Tensor cosine_similarity_matrix(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(1)) {
    throw ContractViolation("cosine_similarity_matrix expects [N, D] and [M, D]");
  }
  const auto an = a / a.norm(2, 1, true).clamp_min(1e-12);
  const auto bn = b / b.norm(2, 1, true).clamp_min(1e-12);
  return an.mm(bn.t());
}

torch::Tensor contrastive_loss(const torch::Tensor& anchors, const torch::Tensor& positives,
                               const ContrastiveLossOptions& options) {
  if (anchors.dim() != 2 || anchors.sizes() != positives.sizes()) {
    throw ContractViolation("contrastive loss expects matching [N, D] embeddings");
  }
  const int64_t n = anchors.size(0);
  if (n < 2) throw ContractViolation("contrastive loss needs N >= 2 so every anchor has a negative");
  if (!(options.temperature > 0)) throw ContractViolation("temperature must be positive");

  const auto logits =
      cosine_similarity_matrix(anchors.to(torch::kFloat64), positives.to(torch::kFloat64)) / options.temperature;
  const auto positive = logits.diagonal();
  torch::Tensor denominator_logits = logits;
  if (!options.include_positive_in_denominator) {
    const auto eye = torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
    denominator_logits = logits.masked_fill(eye, -std::numeric_limits<double>::infinity());
  }
  return (torch::logsumexp(denominator_logits, 1) - positive).mean();
}

namespace {

torch::Tensor as_encoder_dtype(const torch::Tensor& x, EncoderImpl& encoder) {
  return x.to(encoder.parameters().front().scalar_type());
}

}  // namespace

torch::Tensor simclr_loss(const torch::Tensor& anchor_views, const torch::Tensor& positive_views,
                          EncoderImpl& encoder, const ContrastiveLossOptions& options) {
  const auto a = encoder.contrastive_features(as_encoder_dtype(anchor_views, encoder));
  const auto b = encoder.contrastive_features(as_encoder_dtype(positive_views, encoder));
  return contrastive_loss(a, b, options);
}

torch::Tensor simclr_loss(const ViewBatch& views, EncoderImpl& encoder, const ContrastiveLossOptions& options) {
  views.validate();
  return simclr_loss(images_to_tensor(views.anchors()), images_to_tensor(views.view_b), encoder, options);
}

torch::Tensor generate_masks(MaskGeneratorImpl& generator, const torch::Tensor& zs) {
  const bool was_training = generator.is_training();
  generator.eval();
  auto field = generator.forward(zs);
  generator.train(was_training);
  if (field.size(1) != 1 || field.size(2) != kImageSide || field.size(3) != kImageSide) {
    throw ContractViolation("generator must emit [K, 1, 64, 64] fields");
  }
  return straight_through_masks(field);
}

MaskedLoss masked_simclr_loss(const torch::Tensor& view_a, const torch::Tensor& view_b, const torch::Tensor& zs,
                              EncoderImpl& encoder, MaskGeneratorImpl& generator,
                              const ContrastiveLossOptions& options) {
  if (zs.size(0) != view_a.size(0)) {
    std::ostringstream os;
    os << "masked loss needs one latent per anchor: " << zs.size(0) << " latents for " << view_a.size(0)
       << " views";
    throw ContractViolation(os.str());
  }
  MaskedLoss out;
  out.masks = generate_masks(generator, zs);
  out.masked_views = as_encoder_dtype(view_a, encoder) * out.masks.to(encoder.parameters().front().scalar_type());
  out.loss = simclr_loss(out.masked_views, view_b, encoder, options);
  return out;
}

torch::Tensor masked_simclr_loss(ViewBatch& views, const torch::Tensor& zs, EncoderImpl& encoder,
                                 MaskGeneratorImpl& generator, const ContrastiveLossOptions& options) {
  views.validate();
  auto result = masked_simclr_loss(images_to_tensor(views.view_a), images_to_tensor(views.view_b), zs, encoder,
                                   generator, options);
  std::vector<Image> masked;
  masked.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    masked.push_back(tensor_to_image(result.masked_views[static_cast<int64_t>(i)], views.view_a[i].class_id,
                                     views.view_a[i].session_id));
  }
  views.view_a_masked = std::move(masked);
  return result.loss;
}

}  // namespace amcl
