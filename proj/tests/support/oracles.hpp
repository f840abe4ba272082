#pragma once

// Straight-line reference implementations used to cross-check the library. They share no code
// with src/ beyond plain data types.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "amcl/adversarial.hpp"
#include "amcl/encoder.hpp"
#include "amcl/gan.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

double dot(const std::vector<double>& u, const std::vector<double>& v);
double cosine(const std::vector<double>& u, const std::vector<double>& v);

/// Mean over i of -log(exp(S_ii/tau) / sum_{j in D_i} exp(S_ij/tau)), D_i = {j != i} or all j.
double contrastive_loss(const Matrix& a, const Matrix& b, double tau, bool include_positive);

Matrix to_matrix(const torch::Tensor& t);

/// EER by counting at every candidate threshold, accept when score >= t.
double eer(const std::vector<double>& genuine, const std::vector<double>& impostor);

/// Exact area average of a piecewise-constant source image onto a dst_h x dst_w grid.
std::vector<double> area_resize(const std::vector<double>& src, int src_h, int src_w, int dst_h, int dst_w);

/// E log D(x) + E log(1 - D(G(z))) evaluated layer by layer with plain torch ops on the
/// modules' own weights (training-mode batch statistics).
double gan_value(amcl::MaskGeneratorImpl& g, amcl::MaskDiscriminatorImpl& d, const torch::Tensor& real,
                 const torch::Tensor& z);

/// Objective loss + lambda * mean cosine(x, x*m) for given hard masks, via explicit loops.
struct ObjectiveParts {
  double loss;
  double regularizer;
  double total;
};
ObjectiveParts adversarial_objective(const torch::Tensor& view_a, const torch::Tensor& view_b, const torch::Tensor& masks,
                          amcl::EncoderImpl& encoder, double tau, bool include_positive, double lambda);

/// Central differences of f over every entry of `x` (modified in place and restored).
torch::Tensor central_difference(const std::function<double()>& f, torch::Tensor x, double h);

/// ||a - b|| / max(||a||, ||b||, tiny).
double relative_error(const torch::Tensor& a, const torch::Tensor& b);

/// Generator 4 -> 4x4x4 -> 2x16x16 -> 1x64x64, small enough for finite differences.
amcl::GeneratorOptions toy_generator_options();
/// Discriminator 1x64x64 -> 2x16x16 -> 4x4x4 -> 1x1x1.
amcl::DiscriminatorOptions toy_discriminator_options();
amcl::EncoderOptions toy_encoder_options(int64_t embed_dim = 6);

/// Random images in [0, 1], [n, 1, 64, 64].
torch::Tensor random_views(int64_t n, std::uint64_t seed, torch::Dtype dtype = torch::kFloat64);

}  // namespace oracle
