#include "amcl/masking.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "amcl/errors.hpp"

namespace amcl {

namespace {

void check_block(int block) {
  if (block <= 0 || kImageSide % block != 0) {
    throw ContractViolation("patch size must divide 64, got " + std::to_string(block));
  }
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

double Mask::ratio() const {
  const auto zeros = std::count(grid.begin(), grid.end(), std::uint8_t{0});
  return static_cast<double>(zeros) / kImagePixels;
}

bool Mask::is_patch_aligned(int block) const {
  check_block(block);
  for (int br = 0; br < kImageSide; br += block) {
    for (int bc = 0; bc < kImageSide; bc += block) {
      const std::uint8_t v = at(br, bc);
      for (int r = br; r < br + block; ++r) {
        for (int c = bc; c < bc + block; ++c) {
          if (at(r, c) != v) return false;
        }
      }
    }
  }
  return true;
}

int Mask::occluded_patches() const {
  const auto bits = patch_bitmap();
  return static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{0}));
}

std::vector<std::uint8_t> Mask::patch_bitmap() const {
  if (!is_patch_aligned()) throw ContractViolation("mask is not aligned to its patch grid");
  const int p = kImageSide / patch_size;
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(p * p));
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) bits[static_cast<std::size_t>(i * p + j)] = at(i * patch_size, j * patch_size);
  }
  return bits;
}

Mask Mask::from_patch_bitmap(int patch_size, std::span<const std::uint8_t> keep) {
  check_block(patch_size);
  const int p = kImageSide / patch_size;
  if (keep.size() != static_cast<std::size_t>(p * p)) {
    throw ContractViolation("patch bitmap has wrong length");
  }
  Mask mask;
  mask.patch_size = patch_size;
  for (int r = 0; r < kImageSide; ++r) {
    for (int c = 0; c < kImageSide; ++c) {
      mask.grid[static_cast<std::size_t>(r * kImageSide + c)] =
          keep[static_cast<std::size_t>((r / patch_size) * p + c / patch_size)] ? 1 : 0;
    }
  }
  return mask;
}

Mask Mask::all_ones(int patch_size) {
  check_block(patch_size);
  Mask mask;
  mask.patch_size = patch_size;
  return mask;
}

Mask Mask::all_zeros(int patch_size) {
  Mask mask = all_ones(patch_size);
  std::fill(mask.grid.begin(), mask.grid.end(), std::uint8_t{0});
  return mask;
}

void MaskSamplerConfig::validate() const {
  check_block(patch_size);
  if (!(ratio_min >= 0.0 && ratio_min <= ratio_max && ratio_max <= 1.0)) {
    throw ContractViolation("mask ratios must satisfy 0 <= ratio_min <= ratio_max <= 1");
  }
  if (corpus_size == 0) throw ContractViolation("corpus_size must be positive");
}

int occluded_patch_count(double ratio, int patch_count) {
  return static_cast<int>(std::floor(ratio * patch_count + 0.5));
}

Mask sample_mask(const MaskSamplerConfig& config, std::mt19937_64& rng) {
  config.validate();
  const int p = config.patches_per_side();
  const int total = p * p;
  const double r = config.ratio_min == config.ratio_max
                       ? config.ratio_min
                       : std::uniform_real_distribution<double>(config.ratio_min, config.ratio_max)(rng);
  const int occluded = std::min(occluded_patch_count(r, total), total);

  // Partial Fisher-Yates: the first `occluded` slots are a uniform subset.
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < occluded; ++i) {
    const int j = std::uniform_int_distribution<int>(i, total - 1)(rng);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(total), 1);
  for (int i = 0; i < occluded; ++i) keep[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 0;
  return Mask::from_patch_bitmap(config.patch_size, keep);
}

std::vector<Mask> build_mask_corpus(const MaskSamplerConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::vector<Mask> corpus;
  corpus.reserve(config.corpus_size);
  for (std::size_t i = 0; i < config.corpus_size; ++i) corpus.push_back(sample_mask(config, rng));
  return corpus;
}

namespace {

std::string encode_record(const Mask& mask) {
  static constexpr char kHex[] = "0123456789abcdef";
  const auto bits = mask.patch_bitmap();
  std::string out;
  out.reserve((bits.size() + 3) / 4 + 1);
  // MSB-first nibbles, zero padded at the tail.
  for (std::size_t i = 0; i < bits.size(); i += 4) {
    int nibble = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      nibble <<= 1;
      if (i + k < bits.size() && bits[i + k]) nibble |= 1;
    }
    out += kHex[nibble];
  }
  out += '\n';
  return out;
}

std::ofstream open_corpus(const std::filesystem::path& path, int patch, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open mask corpus for writing: " + path.string());
  out << "AMCL-MASKS v1 " << patch << ' ' << count << '\n';
  return out;
}

}  // namespace

void save_mask_corpus(const std::filesystem::path& path, std::span<const Mask> masks) {
  if (masks.empty()) throw ContractViolation("cannot save an empty mask corpus");
  const int patch = masks.front().patch_size;
  for (const Mask& mask : masks) {
    if (mask.patch_size != patch) throw ContractViolation("mixed patch sizes in corpus");
  }
  auto out = open_corpus(path, patch, masks.size());
  for (const Mask& mask : masks) out << encode_record(mask);
  if (!out) throw IoError("failed writing mask corpus: " + path.string());
}

std::size_t write_mask_corpus(const std::filesystem::path& path, const MaskSamplerConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  auto out = open_corpus(path, config.patch_size, config.corpus_size);
  for (std::size_t i = 0; i < config.corpus_size; ++i) out << encode_record(sample_mask(config, rng));
  if (!out) throw IoError("failed writing mask corpus: " + path.string());
  return config.corpus_size;
}

std::size_t for_each_mask_record(const std::filesystem::path& path,
                                 const std::function<void(std::size_t, const Mask&)>& visit) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mask corpus: " + path.string());
  std::string magic, version;
  int patch = 0;
  std::size_t count = 0;
  in >> magic >> version >> patch >> count;
  if (!in || magic != "AMCL-MASKS" || version != "v1") {
    throw IoError("not an AMCL-MASKS v1 file: " + path.string());
  }
  check_block(patch);
  const int p = kImageSide / patch;
  const std::size_t nbits = static_cast<std::size_t>(p * p);
  const std::size_t nhex = (nbits + 3) / 4;
  std::string record;
  std::getline(in, record);
  std::vector<std::uint8_t> bits(nbits);
  for (std::size_t m = 0; m < count; ++m) {
    if (!std::getline(in, record) || record.size() != nhex) {
      throw IoError("truncated or malformed mask record " + std::to_string(m) + " in " + path.string());
    }
    for (std::size_t i = 0; i < nhex; ++i) {
      const int nibble = hex_value(record[i]);
      if (nibble < 0) throw IoError("bad hex digit in mask record " + std::to_string(m));
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t idx = 4 * i + k;
        if (idx < nbits) bits[idx] = (nibble >> (3 - k)) & 1;
      }
    }
    visit(m, Mask::from_patch_bitmap(patch, bits));
  }
  if (std::getline(in, record) && !record.empty()) {
    throw IoError("mask corpus " + path.string() + " has more records than its header declares");
  }
  return count;
}

std::vector<Mask> load_mask_corpus(const std::filesystem::path& path) {
  std::vector<Mask> masks;
  for_each_mask_record(path, [&](std::size_t, const Mask& m) { masks.push_back(m); });
  return masks;
}

Image apply_mask(const Image& image, const Mask& mask) {
  if (image.pixels.size() != static_cast<std::size_t>(kImagePixels) ||
      mask.grid.size() != static_cast<std::size_t>(kImagePixels)) {
    throw ContractViolation("apply_mask: image and mask must both be 64x64");
  }
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] *= static_cast<float>(mask.grid[i]);
  return out;
}

Mask snap_to_grid(const Mask& mask, int patch_size) {
  check_block(patch_size);
  Mask out;
  out.patch_size = patch_size;
  const int area = patch_size * patch_size;
  for (int br = 0; br < kImageSide; br += patch_size) {
    for (int bc = 0; bc < kImageSide; bc += patch_size) {
      int kept = 0;
      for (int r = br; r < br + patch_size; ++r) {
        for (int c = bc; c < bc + patch_size; ++c) kept += mask.at(r, c);
      }
      const std::uint8_t v = 2 * kept >= area ? 1 : 0;
      for (int r = br; r < br + patch_size; ++r) {
        for (int c = bc; c < bc + patch_size; ++c) out.grid[static_cast<std::size_t>(r * kImageSide + c)] = v;
      }
    }
  }
  return out;
}

}  // namespace amcl
