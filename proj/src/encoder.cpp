#include "amcl/encoder.hpp"

#include <map>
#include <mutex>
#include <sstream>

#include "amcl/checkpoint.hpp"
#include "amcl/errors.hpp"

namespace amcl {

namespace nn = torch::nn;

EncoderImpl::EncoderImpl(EncoderOptions options) : options_(std::move(options)) {
  if (options_.embed_dim < 1) throw ContractViolation("embed_dim must be positive");
}

void EncoderImpl::finish_construction() {
  if (options_.projection_head) {
    projection_ = register_module(
        "projection", nn::Sequential(nn::Linear(options_.embed_dim, options_.embed_dim), nn::ReLU(),
                                     nn::Linear(options_.embed_dim, options_.projection_dim)));
  }
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1 || x.size(2) != 64 || x.size(3) != 64) {
    std::ostringstream os;
    os << "encoder expects [N, 1, 64, 64], got " << x.sizes();
    throw ContractViolation(os.str());
  }
  return embed(x);
}

torch::Tensor EncoderImpl::contrastive_features(const torch::Tensor& x) {
  auto features = forward(x);
  return projection_ ? projection_->forward(features) : features;
}

namespace {

class BasicBlockImpl : public nn::Module {
 public:
  BasicBlockImpl(int64_t in, int64_t out, int64_t stride)
      : conv1_(register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)))),
        bn1_(register_module("bn1", nn::BatchNorm2d(out))),
        conv2_(register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)))),
        bn2_(register_module("bn2", nn::BatchNorm2d(out))) {
    if (stride != 1 || in != out) {
      shortcut_ = register_module(
          "shortcut", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                                     nn::BatchNorm2d(out)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = torch::relu(bn1_->forward(conv1_->forward(x)));
    h = bn2_->forward(conv2_->forward(h));
    return torch::relu(h + (shortcut_ ? shortcut_->forward(x) : x));
  }

 private:
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv2_;
  nn::BatchNorm2d bn2_;
  nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock);

// Stem at full resolution, then four stride-2 residual blocks (w, 2w, 4w, 8w) and global
// average pooling. A linear map is appended when embed_dim != 8w.
class ResNetSmall : public EncoderImpl {
 public:
  explicit ResNetSmall(const EncoderOptions& options) : EncoderImpl(options) {
    const int64_t w = options.base_width;
    stem_ = register_module("stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(1, w, 3).padding(1).bias(false)),
                                                   nn::BatchNorm2d(w), nn::ReLU()));
    int64_t in = w;
    for (int i = 0; i < 4; ++i) {
      const int64_t out = w << i;
      blocks_->push_back(BasicBlock(in, out, 2));
      in = out;
    }
    register_module("blocks", blocks_);
    if (options.embed_dim != in) fc_ = register_module("fc", nn::Linear(in, options.embed_dim));
    finish_construction();
  }

 protected:
  torch::Tensor embed(const torch::Tensor& x) override {
    auto h = blocks_->forward(stem_->forward(x));
    h = h.mean({2, 3});
    return fc_ ? fc_->forward(h) : h;
  }

 private:
  nn::Sequential stem_{nullptr};
  nn::Sequential blocks_;
  nn::Linear fc_{nullptr};
};

// Three strided conv layers (w, 2w, 4w) with batchnorm, pooling and a linear embedding.
class ConvSmall : public EncoderImpl {
 public:
  explicit ConvSmall(const EncoderOptions& options) : EncoderImpl(options) {
    const int64_t w = options.base_width;
    features_ = register_module(
        "features",
        nn::Sequential(nn::Conv2d(nn::Conv2dOptions(1, w, 3).stride(2).padding(1)), nn::BatchNorm2d(w), nn::ReLU(),
                       nn::Conv2d(nn::Conv2dOptions(w, 2 * w, 3).stride(2).padding(1)), nn::BatchNorm2d(2 * w),
                       nn::ReLU(), nn::Conv2d(nn::Conv2dOptions(2 * w, 4 * w, 3).stride(2).padding(1)),
                       nn::BatchNorm2d(4 * w), nn::ReLU()));
    fc_ = register_module("fc", nn::Linear(4 * w, options.embed_dim));
    finish_construction();
  }

 protected:
  torch::Tensor embed(const torch::Tensor& x) override { return fc_->forward(features_->forward(x).mean({2, 3})); }

 private:
  nn::Sequential features_{nullptr};
  nn::Linear fc_{nullptr};
};

// Two layers, no normalisation: a 16x16-stride conv with tanh, then a linear map.
class ToyEncoder : public EncoderImpl {
 public:
  explicit ToyEncoder(const EncoderOptions& options) : EncoderImpl(options) {
    conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(1, 2, 16).stride(16)));
    fc_ = register_module("fc", nn::Linear(2 * 4 * 4, options.embed_dim));
    finish_construction();
  }

 protected:
  torch::Tensor embed(const torch::Tensor& x) override {
    return fc_->forward(torch::tanh(conv_->forward(x)).flatten(1));
  }

 private:
  nn::Conv2d conv_{nullptr};
  nn::Linear fc_{nullptr};
};

struct Registry {
  std::mutex mutex;
  std::map<std::string, EncoderFactory> factories{
      {"resnet-small", [](const EncoderOptions& o) -> EncoderPtr { return std::make_shared<ResNetSmall>(o); }},
      {"conv-small", [](const EncoderOptions& o) -> EncoderPtr { return std::make_shared<ConvSmall>(o); }},
      {"toy", [](const EncoderOptions& o) -> EncoderPtr { return std::make_shared<ToyEncoder>(o); }},
  };
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

EncoderPtr make_encoder(const EncoderOptions& options) {
  auto& r = registry();
  EncoderFactory factory;
  {
    std::lock_guard lock(r.mutex);
    const auto it = r.factories.find(options.architecture_id);
    if (it == r.factories.end()) throw ContractViolation("unknown encoder architecture '" + options.architecture_id + "'");
    factory = it->second;
  }
  if (options.base_width < 1) throw ContractViolation("encoder base_width must be positive");
  return factory(options);
}

void register_encoder(const std::string& architecture_id, EncoderFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[architecture_id] = std::move(factory);
}

std::vector<std::string> registered_encoders() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, _] : r.factories) names.push_back(name);
  return names;
}

EncoderPtr clone_encoder(EncoderImpl& encoder) {
  auto copy = make_encoder(encoder.options());
  copy->to(encoder.parameters().front().scalar_type());
  Checkpoint state;
  state.add_module("", encoder);
  state.restore_module("", *copy);
  copy->train(encoder.is_training());
  return copy;
}

void save_encoder(const std::filesystem::path& path, EncoderImpl& encoder) {
  Checkpoint ckpt;
  const auto& o = encoder.options();
  ckpt.metadata["architecture_id"] = o.architecture_id;
  ckpt.metadata["embed_dim"] = std::to_string(o.embed_dim);
  ckpt.metadata["base_width"] = std::to_string(o.base_width);
  ckpt.metadata["projection_head"] = o.projection_head ? "1" : "0";
  ckpt.metadata["projection_dim"] = std::to_string(o.projection_dim);
  ckpt.add_module("encoder.", encoder);
  save_checkpoint(path, ckpt);
}

EncoderPtr load_encoder(const std::filesystem::path& path, const std::string& expected_architecture) {
  const Checkpoint ckpt = load_checkpoint(path);
  EncoderOptions o;
  o.architecture_id = ckpt.meta("architecture_id");
  if (!expected_architecture.empty() && o.architecture_id != expected_architecture) {
    throw CheckpointError(path.string() + " holds encoder '" + o.architecture_id + "', expected '" +
                          expected_architecture + "'");
  }
  o.embed_dim = std::stoll(ckpt.meta("embed_dim"));
  o.base_width = std::stoll(ckpt.meta("base_width"));
  o.projection_head = ckpt.meta("projection_head") == "1";
  o.projection_dim = std::stoll(ckpt.meta("projection_dim"));
  auto encoder = make_encoder(o);
  ckpt.restore_module("encoder.", *encoder);
  return encoder;
}

}  // namespace amcl
