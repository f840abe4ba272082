#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace amcl {

struct EncoderOptions {
  std::string architecture_id = "resnet-small";
  int64_t embed_dim = 512;
  /// Channel count of the first stage; resnet-small doubles it per block.
  int64_t base_width = 64;
  /// Optional 2-layer MLP applied only to contrastive features.
  bool projection_head = false;
  int64_t projection_dim = 128;
};

/// Embedding network E: [N, 1, 64, 64] -> [N, embed_dim].
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(EncoderOptions options);
  ~EncoderImpl() override = default;

  torch::Tensor forward(const torch::Tensor& x);
  /// Features the contrastive objective compares: forward(x), or head(forward(x)).
  torch::Tensor contrastive_features(const torch::Tensor& x);

  const EncoderOptions& options() const { return options_; }
  int64_t embed_dim() const { return options_.embed_dim; }
  const std::string& architecture_id() const { return options_.architecture_id; }

 protected:
  virtual torch::Tensor embed(const torch::Tensor& x) = 0;
  /// Called by subclasses after their layers exist.
  void finish_construction();

 private:
  EncoderOptions options_;
  torch::nn::Sequential projection_{nullptr};
};

using EncoderPtr = std::shared_ptr<EncoderImpl>;
using EncoderFactory = std::function<EncoderPtr(const EncoderOptions&)>;

/// Registry: "resnet-small" (default), "conv-small", "toy" (2-layer, for gradient checks).
EncoderPtr make_encoder(const EncoderOptions& options);
void register_encoder(const std::string& architecture_id, EncoderFactory factory);
std::vector<std::string> registered_encoders();

/// Deep copy (parameters and buffers) of an encoder.
EncoderPtr clone_encoder(EncoderImpl& encoder);

void save_encoder(const std::filesystem::path& path, EncoderImpl& encoder);
/// Refuses checkpoints whose architecture_id differs from `expected_architecture` when given.
EncoderPtr load_encoder(const std::filesystem::path& path, const std::string& expected_architecture = "");

}  // namespace amcl
