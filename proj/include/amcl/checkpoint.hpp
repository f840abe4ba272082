#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace amcl {

/// In-memory form of an `AMCL-CKPT v1` file: string metadata plus named tensors.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  void add_tensor(const std::string& name, const torch::Tensor& tensor);
  bool has_tensor(const std::string& name) const;
  const torch::Tensor& tensor(const std::string& name) const;
  const std::string& meta(const std::string& key) const;

  /// Appends every parameter and buffer of `module` under `prefix`.
  void add_module(const std::string& prefix, const torch::nn::Module& module);
  /// Copies tensors back, validating that every name exists and every shape matches.
  void restore_module(const std::string& prefix, torch::nn::Module& module) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace amcl
