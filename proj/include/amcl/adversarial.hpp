#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "amcl/contrastive.hpp"
#include "amcl/datasets.hpp"
#include "amcl/encoder.hpp"
#include "amcl/gan.hpp"

namespace amcl {

/// The latent variables fed to the frozen generator, plus which member each anchor uses.
struct LatentSet {
  torch::Tensor members;             // [K, latent_dim]
  std::vector<int64_t> assignment;   // batch index -> member index

  int64_t size() const { return members.defined() ? members.size(0) : 0; }
  /// members[assignment[i]] stacked, [N, latent_dim].
  torch::Tensor assigned() const;
  void validate(int64_t batch_size, int64_t latent_dim) const;

  static LatentSet standard_normal(int64_t k, int64_t latent_dim, std::uint64_t seed);
};

/// Redraws the batch -> member assignment for a new epoch. With K == N (default mode) the
/// assignment is a random permutation; in fixed-pool mode it walks the pool round-robin.
void assign_latents(LatentSet& latents, int epoch, int batch_size, bool fixed_pool, std::mt19937_64& rng);

enum class Phase { Encoder, Latent };
const char* phase_name(Phase phase);

struct LossRecord {
  int epoch = 0;
  Phase phase = Phase::Encoder;
  int step = 0;
  double loss = 0.0;
  double regularizer = 0.0;
};

/// Two augmented views of the same N source images, [N, 1, 64, 64] each.
struct AdversarialBatch {
  torch::Tensor view_a;
  torch::Tensor view_b;
};

/// N distinct training images, each augmented twice with the configured policy.
AdversarialBatch draw_batch(std::span<const Image> train, const ContrastiveConfig& config, std::mt19937_64& rng);

struct AdversarialState {
  EncoderPtr encoder;
  MaskGenerator generator{nullptr};  // frozen G*
  LatentSet latent_set;
  ContrastiveConfig config;
  int epoch = 0;
  int t1 = 0;
  int t2 = 0;
  std::vector<LossRecord> history;
  /// Hard masks of every member, valid until the next latent update.
  torch::Tensor member_masks;

  /// Binarised masks for the current assignment; computed lazily from the members.
  torch::Tensor assigned_masks();
  void invalidate_masks() { member_masks = torch::Tensor(); }
};

/// Freezes the generator (no parameter gradients, evaluation mode) and draws K standard-normal
/// latent variables.
AdversarialState make_adversarial_state(EncoderPtr encoder, MaskGenerator generator, const ContrastiveConfig& config);

struct ObjectiveValue {
  torch::Tensor loss;         // masked contrastive loss
  torch::Tensor regularizer;  // mean_i cosine(x^A_i, x^A_i * m_i) on raw pixels
  torch::Tensor total;        // loss + lambda * regularizer
};

/// Pixel-space cosine regulariser, differentiable in `masks`.
torch::Tensor mask_regularizer(const torch::Tensor& view_a, const torch::Tensor& masks);

/// Objective with latents `zs` ([N, latent_dim]), gradients flowing to the encoder and to zs.
ObjectiveValue amcl_objective(const AdversarialBatch& batch, const torch::Tensor& zs, EncoderImpl& encoder,
                              MaskGeneratorImpl& generator, const ContrastiveConfig& config);
ObjectiveValue amcl_objective(const AdversarialBatch& batch, AdversarialState& state);

/// Vanilla SGD on the encoder with the current masks; the regulariser has no encoder gradient
/// and is only logged.
LossRecord encoder_step(const AdversarialBatch& batch, AdversarialState& state);

/// Gradient ascent on the assigned latent members with the encoder frozen, followed by norm
/// clamping to config.latent_norm_cap.
LossRecord latent_step(const AdversarialBatch& batch, AdversarialState& state);

/// One unmasked SimCLR SGD step (the baseline pretraining).
double simclr_step(const AdversarialBatch& batch, EncoderImpl& encoder, const ContrastiveConfig& config);

using PretrainProgress = std::function<void(const LossRecord&)>;

/// Alternating optimisation: per epoch, refresh the latent assignment and masks, run T1
/// encoder steps, then T2 latent steps. Returns the final state (encoder, latents, history).
AdversarialState run_amcl(const DatasetSplit& split, MaskGenerator generator, const ContrastiveConfig& config,
                          const PretrainProgress& progress = {});

/// T1 plain SimCLR encoder steps per epoch, no masking.
EncoderPtr run_simclr(const DatasetSplit& split, const ContrastiveConfig& config,
                      std::vector<LossRecord>* history = nullptr, const PretrainProgress& progress = {});

/// Fresh encoder with the weights every pretraining mode starts from for this config.
EncoderPtr initial_encoder(const ContrastiveConfig& config);

/// Named random substreams used by run_amcl, exposed so reference runs can replay them.
struct PretrainStreams {
  std::uint64_t encoder_init;
  std::uint64_t latents;
  std::uint64_t assignment;
  std::uint64_t encoder_batches;
  std::uint64_t latent_batches;
};
PretrainStreams pretrain_streams(std::uint64_t seed);

void write_loss_history_csv(const std::filesystem::path& path, std::span<const LossRecord> history);

/// Encoder weights, latent set and config hash in one AMCL-CKPT v1 file.
void save_amcl_checkpoint(const std::filesystem::path& path, AdversarialState& state, const std::string& config_hash);

}  // namespace amcl
