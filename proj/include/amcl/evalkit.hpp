#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "amcl/adversarial.hpp"
#include "amcl/contrastive.hpp"
#include "amcl/datasets.hpp"
#include "amcl/encoder.hpp"
#include "amcl/gan.hpp"

namespace amcl {

/// Encoder followed by a linear head embed_dim -> num_classes; probabilities() applies softmax.
class ClassifierImpl : public torch::nn::Module {
 public:
  ClassifierImpl(EncoderPtr encoder, int64_t num_classes);

  torch::Tensor forward(const torch::Tensor& x);  // logits
  torch::Tensor probabilities(const torch::Tensor& x);
  torch::Tensor embed(const torch::Tensor& x);

  EncoderImpl& encoder() { return *encoder_; }
  EncoderPtr encoder_ptr() const { return encoder_; }
  int64_t num_classes() const { return num_classes_; }
  torch::nn::Linear& head() { return head_; }

 private:
  EncoderPtr encoder_;
  torch::nn::Linear head_{nullptr};
  int64_t num_classes_;
};
TORCH_MODULE(Classifier);

/// Head weights are drawn from a seed-derived stream so every pretraining mode gets the same head.
Classifier make_classifier(EncoderPtr encoder, int64_t num_classes, std::uint64_t seed);

struct FinetuneConfig {
  int epochs = 30;
  double learning_rate = 1e-3;
  int batch_size = 32;
  /// Classical augmentation of training images during fine-tuning; empty = none.
  std::optional<AugmentationPolicy> augmentation;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Full-network Adam on cross-entropy. Returns the mean training loss of each epoch.
std::vector<double> finetune(ClassifierImpl& classifier, const DatasetSplit& split, const FinetuneConfig& config);

/// Fraction of `images` whose argmax prediction equals class_id.
double classification_accuracy(ClassifierImpl& classifier, std::span<const Image> images);

enum class DecisionRule { AcceptHigh, AcceptLow };

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Sweeps thresholds over every distinct score plus the two infinite endpoints. With AcceptHigh a
/// pair is accepted when score >= t. The crossing of FAR and FRR is interpolated linearly between
/// the two bracketing thresholds.
EerResult compute_eer(std::span<const double> genuine, std::span<const double> impostor,
                      DecisionRule rule = DecisionRule::AcceptHigh);

struct RocPoint {
  double far = 0.0;
  double gar = 0.0;
};

/// (FAR, GAR) at every threshold, ordered from (0, 0) to (1, 1).
std::vector<RocPoint> compute_roc(std::span<const double> genuine, std::span<const double> impostor,
                                  DecisionRule rule = DecisionRule::AcceptHigh);

enum class ScoreSource { EmbeddingCosine, Posterior };

struct VerificationReport {
  double accuracy = 0.0;
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::vector<RocPoint> roc;
  std::vector<double> genuine_scores;
  std::vector<double> impostor_scores;
};

/// Rank-1 accuracy on split.test plus verification over all test pairs (i < j).
VerificationReport evaluate(ClassifierImpl& classifier, const DatasetSplit& split,
                            ScoreSource source = ScoreSource::EmbeddingCosine);

/// `{accuracy, eer, roc: [[far, gar], ...], config_hash}` with fixed formatting.
std::string report_to_json(const VerificationReport& report, const std::string& config_hash);
void write_report_json(const std::filesystem::path& path, const VerificationReport& report,
                       const std::string& config_hash);
/// Reads back accuracy, eer and roc.
VerificationReport read_report_json(const std::filesystem::path& path);

enum class PretrainMode { Scratch, Simclr, Amcl };
const char* mode_name(PretrainMode mode);
PretrainMode parse_mode(const std::string& name);

struct CompareConfig {
  std::vector<PretrainMode> modes{PretrainMode::Scratch, PretrainMode::Simclr, PretrainMode::Amcl};
  std::vector<std::uint64_t> seeds{0};
  ContrastiveConfig pretrain;
  FinetuneConfig finetune;
  ScoreSource score_source = ScoreSource::EmbeddingCosine;

  void validate() const;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double eer = 0.0;
};

struct ComparisonRow {
  PretrainMode mode = PretrainMode::Scratch;
  double accuracy = 0.0;  // median over seeds
  double eer = 0.0;       // median over seeds
  std::vector<SeedResult> runs;
  VerificationReport report;  // first seed, for ROC plots
};

using CompareProgress = std::function<void(PretrainMode, std::uint64_t seed, const std::string& event)>;

/// Pretrains (or not), fine-tunes and evaluates every mode under every seed with the same
/// budgets. The generator is needed only for the amcl mode.
std::vector<ComparisonRow> compare_pretraining(const DatasetSplit& split, MaskGenerator generator,
                                               const CompareConfig& config, const CompareProgress& progress = {});

/// Pretrained encoder for one mode and seed; scratch returns the shared initial weights.
EncoderPtr pretrain_encoder(PretrainMode mode, const DatasetSplit& split, MaskGenerator generator,
                            const ContrastiveConfig& config, std::vector<LossRecord>* history = nullptr);

/// `mode,ACC,EER`, one row per mode, medians.
void write_comparison_csv(const std::filesystem::path& path, std::span<const ComparisonRow> rows);
/// `mode,seed,ACC,EER`, one row per run.
void write_comparison_runs_csv(const std::filesystem::path& path, std::span<const ComparisonRow> rows);

double median(std::vector<double> values);

}  // namespace amcl
