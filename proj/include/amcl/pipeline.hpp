#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amcl/config.hpp"
#include "amcl/evalkit.hpp"

namespace amcl {

enum class Stage { SynthData, GenMasks, TrainGan, Pretrain, Finetune, Eval, Compare, Report };

const std::vector<Stage>& all_stages();
const char* stage_name(Stage stage);
Stage parse_stage(const std::string& name);

enum ExitCode : int { kExitOk = 0, kExitConfigError = 2, kExitStageFailure = 3, kExitMissingArtifact = 4 };

struct ManifestRecord {
  std::string stage;
  std::string artifact;  // path relative to output_dir; empty for failure records
  std::string hash;
  double wall_time_s = 0.0;
  std::string status = "ok";
  std::string error;
};

/// manifest.jsonl: one JSON record per line, at most one record per artifact.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path path);

  /// Replaces any earlier record of the same artifact.
  void record(const ManifestRecord& record);
  /// Drops earlier failure records of `stage`.
  void clear_failures(const std::string& stage);
  void save() const;
  const std::vector<ManifestRecord>& records() const { return records_; }

 private:
  std::filesystem::path path_;
  std::vector<ManifestRecord> records_;
};

/// Paths (relative to output_dir) a stage reads, given the config.
std::vector<std::string> stage_inputs(Stage stage, const ExperimentConfig& config);
/// Paths (relative to output_dir) whose presence marks the stage as having produced them.
std::vector<std::string> stage_outputs(Stage stage, const ExperimentConfig& config);

/// Runs one stage, writing its artifacts and manifest records. Throws on failure.
void run_stage(Stage stage, const ExperimentConfig& config, Manifest& manifest, std::ostream& log);

/// Checks scheduled inputs, then runs the stages in order. Returns an ExitCode.
int run_pipeline(const ExperimentConfig& config, std::span<const Stage> stages, std::ostream& log);

/// Classifier checkpoint: encoder metadata, num_classes, "classifier." tensors.
void save_classifier(const std::filesystem::path& path, ClassifierImpl& classifier, const std::string& config_hash);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace amcl
