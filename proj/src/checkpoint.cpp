#include "amcl/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "amcl/errors.hpp"

namespace amcl {

namespace {

constexpr const char* kMagic = "AMCL-CKPT v1";

std::string dtype_tag(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw CheckpointError(std::string("unsupported tensor dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from_tag(const std::string& tag) {
  if (tag == "f32") return torch::kFloat32;
  if (tag == "f64") return torch::kFloat64;
  if (tag == "i64") return torch::kInt64;
  throw CheckpointError("unknown tensor dtype tag " + tag);
}

std::string shape_string(c10::IntArrayRef sizes) {
  std::ostringstream os;
  os << sizes;
  return os.str();
}

template <typename F>
void for_each_state(const torch::nn::Module& module, F&& fn) {
  for (const auto& item : module.named_parameters(true)) fn(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) fn(item.key(), item.value());
}

}  // namespace

void Checkpoint::add_tensor(const std::string& name, const torch::Tensor& tensor) {
  if (name.empty() || name.find_first_of(" \n") != std::string::npos) {
    throw CheckpointError("invalid tensor name '" + name + "'");
  }
  tensors.emplace_back(name, tensor.detach().to(torch::kCPU).contiguous().clone());
}

bool Checkpoint::has_tensor(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& p) { return p.first == name; });
}

const torch::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [key, value] : tensors) {
    if (key == name) return value;
  }
  throw CheckpointError("checkpoint has no tensor named " + name);
}

const std::string& Checkpoint::meta(const std::string& key) const {
  const auto it = metadata.find(key);
  if (it == metadata.end()) throw CheckpointError("checkpoint has no metadata key " + key);
  return it->second;
}

void Checkpoint::add_module(const std::string& prefix, const torch::nn::Module& module) {
  for_each_state(module, [&](const std::string& name, const torch::Tensor& t) {
    add_tensor(prefix + name, t);
  });
}

void Checkpoint::restore_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  std::size_t expected = 0;
  for_each_state(module, [&](const std::string& name, const torch::Tensor& target) {
    const torch::Tensor& source = tensor(prefix + name);
    if (source.sizes() != target.sizes()) {
      throw CheckpointError("shape mismatch for " + prefix + name + ": checkpoint " +
                            shape_string(source.sizes()) + " vs architecture " +
                            shape_string(target.sizes()));
    }
    const_cast<torch::Tensor&>(target).copy_(source);
    ++expected;
  });
  const auto present = std::count_if(tensors.begin(), tensors.end(), [&](const auto& p) {
    return p.first.rfind(prefix, 0) == 0;
  });
  if (static_cast<std::size_t>(present) != expected) {
    throw CheckpointError("checkpoint holds " + std::to_string(present) + " tensors under '" + prefix +
                          "' but the architecture has " + std::to_string(expected));
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out << kMagic << '\n' << "meta " << checkpoint.metadata.size() << '\n';
  for (const auto& [key, value] : checkpoint.metadata) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw CheckpointError("metadata entries may not contain newlines or '=' in keys");
    }
    out << key << '=' << value << '\n';
  }
  out << "tensors " << checkpoint.tensors.size() << '\n';
  for (const auto& [name, tensor] : checkpoint.tensors) {
    const auto t = tensor.contiguous();
    out << name << ' ' << dtype_tag(t.scalar_type()) << ' ' << t.dim();
    for (auto d : t.sizes()) out << ' ' << d;
    const auto nbytes = t.numel() * static_cast<int64_t>(t.element_size());
    out << ' ' << nbytes << '\n';
    out.write(static_cast<const char*>(t.data_ptr()), nbytes);
    out << '\n';
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw CheckpointError("not an AMCL-CKPT v1 file: " + path.string());
  }
  Checkpoint checkpoint;
  std::string word;
  std::size_t count = 0;
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "meta %zu", &count) != 1) {
    throw CheckpointError("missing metadata header in " + path.string());
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw CheckpointError("truncated metadata in " + path.string());
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed metadata line in " + path.string());
    checkpoint.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "tensors %zu", &count) != 1) {
    throw CheckpointError("missing tensor header in " + path.string());
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw CheckpointError("truncated tensor table in " + path.string());
    std::istringstream header(line);
    std::string name, tag;
    int64_t ndim = 0;
    header >> name >> tag >> ndim;
    std::vector<int64_t> sizes(static_cast<std::size_t>(std::max<int64_t>(ndim, 0)));
    for (auto& s : sizes) header >> s;
    int64_t nbytes = 0;
    header >> nbytes;
    if (!header || ndim < 0) throw CheckpointError("malformed tensor header '" + line + "'");
    auto t = torch::empty(sizes, torch::TensorOptions().dtype(dtype_from_tag(tag)));
    if (t.numel() * static_cast<int64_t>(t.element_size()) != nbytes) {
      throw CheckpointError("byte count disagrees with shape for tensor " + name);
    }
    in.read(static_cast<char*>(t.data_ptr()), nbytes);
    if (!in || in.get() != '\n') throw CheckpointError("truncated tensor data for " + name);
    checkpoint.tensors.emplace_back(name, t);
  }
  return checkpoint;
}

}  // namespace amcl
