#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "amcl/contrastive.hpp"
#include "amcl/datasets.hpp"
#include "amcl/evalkit.hpp"
#include "amcl/gan.hpp"
#include "amcl/masking.hpp"

namespace amcl {

/// Everything one pipeline run needs. Parsed from sectioned key = value text:
/// [run] [data] [masks] [gan] [pretrain] [finetune] [eval] [compare].
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";

  std::string data_source = "synthetic";  // synthetic | directory
  std::filesystem::path data_root;
  SyntheticVeinConfig synthetic;
  DirectoryLayout layout;

  MaskSamplerConfig masks;
  std::size_t gallery_masks = 32;

  GanTrainConfig gan;
  int64_t gan_width_divisor = 1;
  double generator_slope = 0.0;
  double discriminator_slope = 0.2;
  bool snap_to_grid = false;

  std::string pretrain_mode = "amcl";  // amcl | simclr
  ContrastiveConfig pretrain;

  std::string finetune_source = "pretrain";  // pretrain | scratch
  FinetuneConfig finetune;
  bool finetune_augment = false;

  ScoreSource score_source = ScoreSource::EmbeddingCosine;

  std::vector<PretrainMode> compare_modes{PretrainMode::Scratch, PretrainMode::Simclr, PretrainMode::Amcl};
  std::vector<std::uint64_t> compare_seeds{0, 1, 2};

  /// Throws ConfigError on any invalid value.
  void validate() const;

  /// Sorted `section.key = value` lines of every setting except run.output_dir.
  std::string canonical_text() const;
  /// SHA-256 of canonical_text().
  std::string config_hash() const;

  GeneratorOptions generator_options() const;
  DiscriminatorOptions discriminator_options() const;
  /// Stage configs with their seeds derived from `seed` by name.
  MaskSamplerConfig mask_sampler() const;
  GanTrainConfig gan_train() const;
  ContrastiveConfig pretrain_config() const;
  FinetuneConfig finetune_config() const;
  CompareConfig compare_config() const;
};

/// Parses INI text, then applies `section.key=value` overrides in order. Unknown sections or
/// keys and malformed values raise ConfigError. The result is validated.
ExperimentConfig parse_experiment_config(const std::string& text, const std::vector<std::string>& overrides = {});

/// Reads the file (an empty path means all defaults) and honours AMCL_OUTPUT_DIR.
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});

/// Every recognised `section.key`.
std::vector<std::string> config_keys();

}  // namespace amcl
