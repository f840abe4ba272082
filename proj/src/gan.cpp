#include "amcl/gan.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "amcl/checkpoint.hpp"
#include "amcl/errors.hpp"
#include "amcl/seeds.hpp"

namespace amcl {

namespace nn = torch::nn;

std::vector<LayerSpec> generator_table_layers(int64_t width_divisor) {
  if (width_divisor < 1 || 256 % width_divisor != 0) {
    throw ContractViolation("generator width divisor must divide 256");
  }
  const int64_t w = width_divisor;
  return {{2048 / w, 4, 1, 0}, {1024 / w, 4, 2, 1}, {512 / w, 4, 2, 1}, {256 / w, 4, 2, 1}, {1, 4, 2, 1}};
}

std::vector<LayerSpec> discriminator_table_layers(int64_t width_divisor) {
  if (width_divisor < 1 || 32 % width_divisor != 0) {
    throw ContractViolation("discriminator width divisor must divide 32");
  }
  const int64_t w = width_divisor;
  return {{32 / w, 8, 4, 2}, {64 / w, 4, 2, 1}, {128 / w, 4, 2, 1}, {1, 4, 1, 0}};
}

std::string encode_layers(std::span<const LayerSpec> layers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) os << ',';
    os << layers[i].out_channels << ':' << layers[i].kernel << ':' << layers[i].stride << ':'
       << layers[i].padding;
  }
  return os.str();
}

std::vector<LayerSpec> decode_layers(const std::string& text) {
  std::vector<LayerSpec> layers;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    LayerSpec spec;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream fs(item);
    fs >> spec.out_channels >> c1 >> spec.kernel >> c2 >> spec.stride >> c3 >> spec.padding;
    if (!fs || c1 != ':' || c2 != ':' || c3 != ':') throw CheckpointError("malformed layer spec " + item);
    layers.push_back(spec);
  }
  return layers;
}

MaskGeneratorImpl::MaskGeneratorImpl(GeneratorOptions options) : options_(std::move(options)) {
  if (options_.layers.empty()) throw ContractViolation("generator needs at least one layer");
  int64_t in = options_.latent_dim;
  for (std::size_t i = 0; i < options_.layers.size(); ++i) {
    const LayerSpec& s = options_.layers[i];
    deconvs_.push_back(register_module(
        "deconv" + std::to_string(i),
        nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, s.out_channels, s.kernel)
                                .stride(s.stride)
                                .padding(s.padding))));
    if (i + 1 < options_.layers.size()) {
      norms_.push_back(register_module("bn" + std::to_string(i), nn::BatchNorm2d(s.out_channels)));
    }
    in = s.out_channels;
  }
}

torch::Tensor MaskGeneratorImpl::reshape_latent(const torch::Tensor& z) const {
  const bool flat = z.dim() == 2;
  const bool spatial = z.dim() == 4 && z.size(2) == 1 && z.size(3) == 1;
  if (!(flat || spatial) || z.size(1) != options_.latent_dim) {
    std::ostringstream os;
    os << "generator expects latent vectors of dimension " << options_.latent_dim << ", got shape "
       << z.sizes();
    throw ContractViolation(os.str());
  }
  return flat ? z.view({z.size(0), z.size(1), 1, 1}) : z;
}

std::vector<torch::Tensor> MaskGeneratorImpl::forward_trace(const torch::Tensor& z) {
  std::vector<torch::Tensor> trace;
  auto x = reshape_latent(z).to(deconvs_.front()->weight.scalar_type());
  for (std::size_t i = 0; i < deconvs_.size(); ++i) {
    x = deconvs_[i]->forward(x);
    if (i < norms_.size()) {
      x = norms_[i]->forward(x);
      x = options_.activation_slope > 0 ? torch::leaky_relu(x, options_.activation_slope) : torch::relu(x);
    } else {
      x = torch::tanh(x);
    }
    trace.push_back(x);
  }
  return trace;
}

torch::Tensor MaskGeneratorImpl::forward(const torch::Tensor& z) { return forward_trace(z).back(); }

MaskDiscriminatorImpl::MaskDiscriminatorImpl(DiscriminatorOptions options) : options_(std::move(options)) {
  if (options_.layers.empty()) throw ContractViolation("discriminator needs at least one layer");
  int64_t in = 1;
  for (std::size_t i = 0; i < options_.layers.size(); ++i) {
    const LayerSpec& s = options_.layers[i];
    convs_.push_back(register_module(
        "conv" + std::to_string(i),
        nn::Conv2d(nn::Conv2dOptions(in, s.out_channels, s.kernel).stride(s.stride).padding(s.padding))));
    if (i + 1 < options_.layers.size()) {
      norms_.push_back(register_module("bn" + std::to_string(i), nn::BatchNorm2d(s.out_channels)));
    }
    in = s.out_channels;
  }
  if (options_.layers.back().out_channels != 1) {
    throw ContractViolation("discriminator must end in a single channel");
  }
}

void MaskDiscriminatorImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != 1 || x.size(2) != 64 || x.size(3) != 64) {
    std::ostringstream os;
    os << "discriminator expects [B, 1, 64, 64], got " << x.sizes();
    throw ContractViolation(os.str());
  }
}

std::vector<torch::Tensor> MaskDiscriminatorImpl::forward_trace(const torch::Tensor& x) {
  check_input(x);
  std::vector<torch::Tensor> trace;
  auto h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i]->forward(h);
    if (i < norms_.size()) {
      h = torch::leaky_relu(norms_[i]->forward(h), options_.activation_slope);
    } else {
      h = torch::sigmoid(h);
    }
    trace.push_back(h);
  }
  return trace;
}

torch::Tensor MaskDiscriminatorImpl::logits(const torch::Tensor& x) {
  check_input(x);
  auto h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i]->forward(h);
    if (i < norms_.size()) h = torch::leaky_relu(norms_[i]->forward(h), options_.activation_slope);
  }
  return h.reshape({h.size(0), -1}).mean(1);
}

torch::Tensor MaskDiscriminatorImpl::forward(const torch::Tensor& x) { return torch::sigmoid(logits(x)); }

void initialize_dcgan_weights(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/false)) {
    if (auto* conv = child->as<nn::Conv2d>()) {
      conv->weight.normal_(0.0, 0.02);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* deconv = child->as<nn::ConvTranspose2d>()) {
      deconv->weight.normal_(0.0, 0.02);
      if (deconv->bias.defined()) deconv->bias.zero_();
    } else if (auto* bn = child->as<nn::BatchNorm2d>()) {
      bn->weight.normal_(1.0, 0.02);
      bn->bias.zero_();
    }
  }
}

void GanTrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ContractViolation("GAN epochs and batch size must be positive");
  if (!(learning_rate > 0)) throw ContractViolation("GAN learning rate must be positive");
  if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) {
    throw ContractViolation("GAN momentum decays must lie in (0, 1)");
  }
}

torch::Tensor masks_to_gan_tensor(std::span<const Mask> masks) {
  auto out = torch::empty({static_cast<int64_t>(masks.size()), 1, 64, 64}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const Mask& mask : masks) {
    for (std::uint8_t bit : mask.grid) *dst++ = bit ? 1.0f : -1.0f;
  }
  return out;
}

torch::Tensor gan_value(MaskGeneratorImpl& g, MaskDiscriminatorImpl& d, const torch::Tensor& real,
                        const torch::Tensor& z) {
  // log D = logsigmoid(l), log(1 - D) = logsigmoid(-l)
  return torch::log_sigmoid(d.logits(real)).mean() + torch::log_sigmoid(-d.logits(g.forward(z))).mean();
}

GanTrainer::GanTrainer(MaskGenerator g, MaskDiscriminator d, const GanTrainConfig& config)
    : generator(std::move(g)),
      discriminator(std::move(d)),
      config_(config),
      g_optimizer_(generator->parameters(),
                   torch::optim::AdamOptions(config.learning_rate).betas({config.beta1, config.beta2})),
      d_optimizer_(discriminator->parameters(),
                   torch::optim::AdamOptions(config.learning_rate).betas({config.beta1, config.beta2})),
      noise_(make_torch_generator(derive_seed(config.seed, "gan/noise"))) {
  config_.validate();
}

GanStepLoss GanTrainer::step(const torch::Tensor& real_batch) {
  generator->train();
  discriminator->train();
  const int64_t batch = real_batch.size(0);
  const auto z = torch::randn({batch, generator->options().latent_dim}, noise_, real_batch.options());

  d_optimizer_.zero_grad();
  const auto fake = generator->forward(z).detach();
  const auto d_loss = -(torch::log_sigmoid(discriminator->logits(real_batch)).mean() +
                        torch::log_sigmoid(-discriminator->logits(fake)).mean());
  d_loss.backward();
  d_optimizer_.step();

  g_optimizer_.zero_grad();
  const auto g_loss = -torch::log_sigmoid(discriminator->logits(generator->forward(z))).mean();
  g_loss.backward();
  g_optimizer_.step();

  return {d_loss.item<double>(), g_loss.item<double>()};
}

bool CollapseDetector::observe(double d_loss) {
  run_ = d_loss < threshold_ ? run_ + 1 : 0;
  return run_ >= patience_;
}

GanTrainResult train_gan(std::span<const Mask> corpus, const GanTrainConfig& config,
                         const GeneratorOptions& generator_options,
                         const DiscriminatorOptions& discriminator_options, const GanProgress& progress) {
  config.validate();
  if (corpus.empty()) throw ContractViolation("GAN training needs a non-empty mask corpus");

  torch::manual_seed(derive_seed(config.seed, "gan/init"));
  MaskGenerator g(generator_options);
  MaskDiscriminator d(discriminator_options);
  initialize_dcgan_weights(*g);
  initialize_dcgan_weights(*d);
  GanTrainer trainer(g, d, config);

  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "gan/shuffle"));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  GanTrainResult result;
  CollapseDetector collapse;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double d_sum = 0.0, g_sum = 0.0;
    int steps = 0;
    std::vector<Mask> batch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      // Batchnorm needs more than one sample per batch.
      if (end - start < 2 && steps > 0) break;
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(corpus[order[i]]);
      if (batch.size() < 2) batch.push_back(batch.front());
      const GanStepLoss loss = trainer.step(masks_to_gan_tensor(batch));
      d_sum += loss.d_loss;
      g_sum += loss.g_loss;
      ++steps;
    }
    const GanEpochLoss record{epoch, d_sum / steps, g_sum / steps};
    if (!std::isfinite(record.d_loss) || !std::isfinite(record.g_loss)) {
      throw NonFiniteGradientError("GAN loss became non-finite at epoch " + std::to_string(epoch));
    }
    result.trace.push_back(record);
    if (progress) progress(record);
    if (collapse.observe(record.d_loss)) {
      std::ostringstream os;
      os << "mode collapse: discriminator loss below 1e-6 for 3 consecutive epochs (epoch " << epoch
         << ", d_loss=" << record.d_loss << ", g_loss=" << record.g_loss << ")";
      throw ModeCollapseError(os.str());
    }
  }
  result.generator = trainer.generator;
  result.discriminator = trainer.discriminator;
  return result;
}

torch::Tensor binarize_mask_field(const torch::Tensor& field) { return (field > 0).to(field.scalar_type()); }

torch::Tensor straight_through_masks(const torch::Tensor& field) {
  return (field - field.detach()) + binarize_mask_field(field).detach();
}

std::vector<Mask> sample_masks(MaskGeneratorImpl& generator, const torch::Tensor& zs, int snap_to_patch) {
  const bool was_training = generator.is_training();
  generator.eval();
  torch::Tensor hard;
  {
    torch::NoGradGuard no_grad;
    hard = binarize_mask_field(generator.forward(zs)).to(torch::kUInt8).contiguous();
  }
  generator.train(was_training);
  if (hard.size(2) != 64 || hard.size(3) != 64) throw ContractViolation("generator does not emit 64x64 fields");
  std::vector<Mask> masks;
  masks.reserve(static_cast<std::size_t>(hard.size(0)));
  const std::uint8_t* src = hard.data_ptr<std::uint8_t>();
  for (int64_t k = 0; k < hard.size(0); ++k) {
    Mask mask;
    std::copy(src, src + kImagePixels, mask.grid.begin());
    src += kImagePixels;
    masks.push_back(snap_to_patch > 0 ? snap_to_grid(mask, snap_to_patch) : std::move(mask));
  }
  return masks;
}

void write_gan_trace_csv(const std::filesystem::path& path, std::span<const GanEpochLoss> trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "epoch,d_loss,g_loss\n";
  for (const auto& r : trace) out << r.epoch << ',' << r.d_loss << ',' << r.g_loss << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void save_generator(const std::filesystem::path& path, MaskGeneratorImpl& generator) {
  Checkpoint ckpt;
  ckpt.metadata["architecture_id"] = "mask-generator";
  ckpt.metadata["latent_dim"] = std::to_string(generator.options().latent_dim);
  ckpt.metadata["layers"] = encode_layers(generator.options().layers);
  std::ostringstream slope;
  slope.precision(17);
  slope << generator.options().activation_slope;
  ckpt.metadata["activation_slope"] = slope.str();
  ckpt.add_module("generator.", generator);
  save_checkpoint(path, ckpt);
}

MaskGenerator load_generator(const std::filesystem::path& path, const GeneratorOptions* expected) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta("architecture_id") != "mask-generator") {
    throw CheckpointError(path.string() + " is not a mask-generator checkpoint");
  }
  GeneratorOptions options;
  options.latent_dim = std::stoll(ckpt.meta("latent_dim"));
  options.layers = decode_layers(ckpt.meta("layers"));
  options.activation_slope = std::stod(ckpt.meta("activation_slope"));
  if (expected && (expected->layers != options.layers || expected->latent_dim != options.latent_dim)) {
    throw CheckpointError(path.string() + " does not match the expected generator architecture");
  }
  MaskGenerator g(options);
  ckpt.restore_module("generator.", *g);
  return g;
}

void save_discriminator(const std::filesystem::path& path, MaskDiscriminatorImpl& discriminator) {
  Checkpoint ckpt;
  ckpt.metadata["architecture_id"] = "mask-discriminator";
  ckpt.metadata["layers"] = encode_layers(discriminator.options().layers);
  std::ostringstream slope;
  slope.precision(17);
  slope << discriminator.options().activation_slope;
  ckpt.metadata["activation_slope"] = slope.str();
  ckpt.add_module("discriminator.", discriminator);
  save_checkpoint(path, ckpt);
}

MaskDiscriminator load_discriminator(const std::filesystem::path& path, const DiscriminatorOptions* expected) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta("architecture_id") != "mask-discriminator") {
    throw CheckpointError(path.string() + " is not a mask-discriminator checkpoint");
  }
  DiscriminatorOptions options;
  options.layers = decode_layers(ckpt.meta("layers"));
  options.activation_slope = std::stod(ckpt.meta("activation_slope"));
  if (expected && expected->layers != options.layers) {
    throw CheckpointError(path.string() + " does not match the expected discriminator architecture");
  }
  MaskDiscriminator d(options);
  ckpt.restore_module("discriminator.", *d);
  return d;
}

}  // namespace amcl
