#include "amcl/adversarial.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "amcl/checkpoint.hpp"
#include "amcl/errors.hpp"
#include "amcl/seeds.hpp"

namespace amcl {

torch::Tensor LatentSet::assigned() const {
  const auto index = torch::tensor(assignment, torch::kInt64);
  return members.index_select(0, index);
}

void LatentSet::validate(int64_t batch_size, int64_t latent_dim) const {
  if (!members.defined() || members.dim() != 2 || members.size(1) != latent_dim) {
    throw ContractViolation("latent members must be [K, " + std::to_string(latent_dim) + "]");
  }
  if (static_cast<int64_t>(assignment.size()) != batch_size) {
    throw ContractViolation("latent assignment must cover the whole batch");
  }
  for (auto m : assignment) {
    if (m < 0 || m >= size()) throw ContractViolation("latent assignment out of range");
  }
}

LatentSet LatentSet::standard_normal(int64_t k, int64_t latent_dim, std::uint64_t seed) {
  auto gen = make_torch_generator(seed);
  LatentSet set;
  set.members = torch::randn({k, latent_dim}, gen, torch::kFloat32);
  return set;
}

void assign_latents(LatentSet& latents, int epoch, int batch_size, bool fixed_pool, std::mt19937_64& rng) {
  const int64_t k = latents.size();
  latents.assignment.resize(static_cast<std::size_t>(batch_size));
  if (fixed_pool) {
    const int64_t offset = (static_cast<int64_t>(epoch - 1) * batch_size) % k;
    for (int i = 0; i < batch_size; ++i) latents.assignment[static_cast<std::size_t>(i)] = (offset + i) % k;
    return;
  }
  if (k < batch_size) throw ContractViolation("latent set smaller than the batch");
  std::vector<int64_t> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), int64_t{0});
  for (int i = 0; i < batch_size; ++i) {
    const auto j = std::uniform_int_distribution<int64_t>(i, k - 1)(rng);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    latents.assignment[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(i)];
  }
}

const char* phase_name(Phase phase) { return phase == Phase::Encoder ? "encoder" : "latent"; }

AdversarialBatch draw_batch(std::span<const Image> train, const ContrastiveConfig& config, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(config.batch_size);
  if (train.size() < n) {
    throw ContractViolation("training split has " + std::to_string(train.size()) + " images, batch needs " +
                            std::to_string(n));
  }
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Image> picked;
  picked.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, order.size() - 1)(rng);
    std::swap(order[i], order[j]);
    picked.push_back(train[order[i]]);
  }
  const ViewBatch views = augment_views(picked, config.augmentation, rng);
  return {images_to_tensor(views.view_a), images_to_tensor(views.view_b)};
}

torch::Tensor AdversarialState::assigned_masks() {
  if (!member_masks.defined()) {
    torch::NoGradGuard no_grad;
    generator->eval();
    member_masks = binarize_mask_field(generator->forward(latent_set.members));
  }
  return member_masks.index_select(0, torch::tensor(latent_set.assignment, torch::kInt64));
}

AdversarialState make_adversarial_state(EncoderPtr encoder, MaskGenerator generator, const ContrastiveConfig& config) {
  config.validate();
  if (!encoder || !generator) throw ContractViolation("adversarial state needs an encoder and a generator");
  for (auto& p : generator->parameters()) p.set_requires_grad(false);
  generator->eval();
  AdversarialState state;
  state.encoder = std::move(encoder);
  state.generator = std::move(generator);
  state.config = config;
  state.latent_set = LatentSet::standard_normal(config.latent_set_k(), state.generator->options().latent_dim,
                                                pretrain_streams(config.seed).latents);
  state.latent_set.assignment.resize(static_cast<std::size_t>(config.batch_size));
  for (int i = 0; i < config.batch_size; ++i) {
    state.latent_set.assignment[static_cast<std::size_t>(i)] = i % config.latent_set_k();
  }
  return state;
}

torch::Tensor mask_regularizer(const torch::Tensor& view_a, const torch::Tensor& masks) {
  const auto x = view_a.to(torch::kFloat64).flatten(1);
  const auto xm = x * masks.to(torch::kFloat64).flatten(1);
  const auto cos = (x * xm).sum(1) / (x.norm(2, 1) * xm.norm(2, 1)).clamp_min(1e-12);
  return cos.mean();
}

ObjectiveValue amcl_objective(const AdversarialBatch& batch, const torch::Tensor& zs, EncoderImpl& encoder,
                              MaskGeneratorImpl& generator, const ContrastiveConfig& config) {
  const MaskedLoss masked =
      masked_simclr_loss(batch.view_a, batch.view_b, zs, encoder, generator, config.loss_options());
  ObjectiveValue value;
  value.loss = masked.loss;
  value.regularizer = mask_regularizer(batch.view_a, masked.masks);
  value.total = value.loss + config.lambda_reg * value.regularizer;
  return value;
}

ObjectiveValue amcl_objective(const AdversarialBatch& batch, AdversarialState& state) {
  state.latent_set.validate(batch.view_a.size(0), state.generator->options().latent_dim);
  return amcl_objective(batch, state.latent_set.assigned(), *state.encoder, *state.generator, state.config);
}

namespace {

void sgd_descend(EncoderImpl& encoder, double alpha, const char* what) {
  torch::NoGradGuard no_grad;
  for (const auto& item : encoder.named_parameters(true)) {
    auto& p = item.value();
    if (!p.grad().defined()) continue;
    if (!torch::isfinite(p.grad()).all().item<bool>()) {
      throw NonFiniteGradientError(std::string(what) + ": non-finite gradient in encoder parameter " + item.key());
    }
    p.sub_(alpha * p.grad());
  }
}

}  // namespace

LossRecord encoder_step(const AdversarialBatch& batch, AdversarialState& state) {
  state.latent_set.validate(batch.view_a.size(0), state.generator->options().latent_dim);
  EncoderImpl& encoder = *state.encoder;
  encoder.train();
  encoder.zero_grad();
  const auto masks = state.assigned_masks();
  const auto dtype = encoder.parameters().front().scalar_type();
  const auto anchors = batch.view_a.to(dtype) * masks.to(dtype);
  const auto loss = simclr_loss(anchors, batch.view_b, encoder, state.config.loss_options());
  loss.backward();
  sgd_descend(encoder, state.config.alpha, "encoder_step");
  encoder.zero_grad();

  LossRecord record;
  record.epoch = state.epoch;
  record.phase = Phase::Encoder;
  record.step = state.t1;
  record.loss = loss.item<double>();
  record.regularizer = mask_regularizer(batch.view_a, masks).item<double>();
  return record;
}

LossRecord latent_step(const AdversarialBatch& batch, AdversarialState& state) {
  const int64_t latent_dim = state.generator->options().latent_dim;
  state.latent_set.validate(batch.view_a.size(0), latent_dim);
  EncoderImpl& encoder = *state.encoder;
  const bool was_training = encoder.is_training();
  encoder.eval();

  auto z = state.latent_set.members.detach().clone().requires_grad_(true);
  const auto zs = z.index_select(0, torch::tensor(state.latent_set.assignment, torch::kInt64));
  const ObjectiveValue value = amcl_objective(batch, zs, encoder, *state.generator, state.config);
  const auto grad = torch::autograd::grad({value.total}, {z})[0];
  encoder.train(was_training);
  if (!torch::isfinite(grad).all().item<bool>()) {
    std::ostringstream os;
    os << "latent_step: non-finite latent gradient at epoch " << state.epoch << " (objective "
       << value.total.item<double>() << ")";
    throw NonFiniteGradientError(os.str());
  }

  torch::Tensor updated;
  {
    torch::NoGradGuard no_grad;
    updated = z.detach() + state.config.beta * grad.to(z.scalar_type());
    const auto norms = updated.norm(2, 1, true);
    const auto scale = (state.config.latent_norm_cap / norms.clamp_min(1e-12)).clamp_max(1.0);
    updated = torch::where(norms > state.config.latent_norm_cap, updated * scale, updated);
  }
  state.latent_set.members = updated;
  state.invalidate_masks();

  LossRecord record;
  record.epoch = state.epoch;
  record.phase = Phase::Latent;
  record.step = state.t2;
  record.loss = value.loss.item<double>();
  record.regularizer = value.regularizer.item<double>();
  return record;
}

double simclr_step(const AdversarialBatch& batch, EncoderImpl& encoder, const ContrastiveConfig& config) {
  encoder.train();
  encoder.zero_grad();
  const auto loss = simclr_loss(batch.view_a, batch.view_b, encoder, config.loss_options());
  loss.backward();
  sgd_descend(encoder, config.alpha, "simclr_step");
  encoder.zero_grad();
  return loss.item<double>();
}

PretrainStreams pretrain_streams(std::uint64_t seed) {
  return {derive_seed(seed, "pretrain/encoder-init"), derive_seed(seed, "pretrain/latents"),
          derive_seed(seed, "pretrain/assignment"), derive_seed(seed, "pretrain/encoder-batches"),
          derive_seed(seed, "pretrain/latent-batches")};
}

EncoderPtr initial_encoder(const ContrastiveConfig& config) {
  torch::manual_seed(pretrain_streams(config.seed).encoder_init);
  return make_encoder(config.encoder);
}

AdversarialState run_amcl(const DatasetSplit& split, MaskGenerator generator, const ContrastiveConfig& config,
                          const PretrainProgress& progress) {
  config.validate();
  if (split.train.empty()) throw ContractViolation("run_amcl needs training images");
  const PretrainStreams streams = pretrain_streams(config.seed);
  AdversarialState state = make_adversarial_state(initial_encoder(config), std::move(generator), config);

  std::mt19937_64 assignment_rng(streams.assignment);
  std::mt19937_64 encoder_rng(streams.encoder_batches);
  std::mt19937_64 latent_rng(streams.latent_batches);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    state.epoch = epoch;
    state.t1 = 0;
    state.t2 = 0;
    assign_latents(state.latent_set, epoch, config.batch_size, config.fixed_pool, assignment_rng);
    state.invalidate_masks();
    for (int t = 1; t <= config.t1; ++t) {
      state.t1 = t;
      const auto batch = draw_batch(split.train, config, encoder_rng);
      state.history.push_back(encoder_step(batch, state));
      if (progress) progress(state.history.back());
    }
    for (int t = 1; t <= config.t2; ++t) {
      state.t2 = t;
      const auto batch = draw_batch(split.train, config, latent_rng);
      state.history.push_back(latent_step(batch, state));
      if (progress) progress(state.history.back());
    }
  }
  return state;
}

EncoderPtr run_simclr(const DatasetSplit& split, const ContrastiveConfig& config, std::vector<LossRecord>* history,
                      const PretrainProgress& progress) {
  config.validate();
  if (split.train.empty()) throw ContractViolation("run_simclr needs training images");
  auto encoder = initial_encoder(config);
  std::mt19937_64 rng(pretrain_streams(config.seed).encoder_batches);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (int t = 1; t <= config.t1; ++t) {
      const auto batch = draw_batch(split.train, config, rng);
      LossRecord record{epoch, Phase::Encoder, t, simclr_step(batch, *encoder, config), 0.0};
      if (history) history->push_back(record);
      if (progress) progress(record);
    }
  }
  return encoder;
}

void write_loss_history_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "epoch,phase,step,loss,regularizer\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << phase_name(r.phase) << ',' << r.step << ',' << r.loss << ',' << r.regularizer << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void save_amcl_checkpoint(const std::filesystem::path& path, AdversarialState& state, const std::string& config_hash) {
  Checkpoint ckpt;
  const auto& o = state.encoder->options();
  ckpt.metadata["architecture_id"] = o.architecture_id;
  ckpt.metadata["embed_dim"] = std::to_string(o.embed_dim);
  ckpt.metadata["base_width"] = std::to_string(o.base_width);
  ckpt.metadata["projection_head"] = o.projection_head ? "1" : "0";
  ckpt.metadata["projection_dim"] = std::to_string(o.projection_dim);
  ckpt.metadata["config_hash"] = config_hash;
  ckpt.metadata["epochs_completed"] = std::to_string(state.epoch);
  ckpt.add_module("encoder.", *state.encoder);
  ckpt.add_tensor("latent.members", state.latent_set.members);
  save_checkpoint(path, ckpt);
}

}  // namespace amcl
