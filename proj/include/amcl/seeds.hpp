#pragma once

#include <cstdint>
#include <string_view>

#include <torch/torch.h>

namespace amcl {

/// Named random substream of a top-level seed. Stable across platforms.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);

/// CPU torch generator seeded deterministically.
torch::Generator make_torch_generator(std::uint64_t seed);

}  // namespace amcl
