#include "amcl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "json.hpp"

#include "amcl/errors.hpp"
#include "amcl/seeds.hpp"

namespace amcl {

ClassifierImpl::ClassifierImpl(EncoderPtr encoder, int64_t num_classes)
    : encoder_(std::move(encoder)), num_classes_(num_classes) {
  if (!encoder_) throw ContractViolation("classifier needs an encoder");
  if (num_classes_ < 2) throw ContractViolation("classifier needs at least 2 classes");
  register_module("encoder", encoder_);
  head_ = register_module("head", torch::nn::Linear(encoder_->embed_dim(), num_classes_));
}

torch::Tensor ClassifierImpl::embed(const torch::Tensor& x) { return encoder_->forward(x); }

torch::Tensor ClassifierImpl::forward(const torch::Tensor& x) { return head_->forward(encoder_->forward(x)); }

torch::Tensor ClassifierImpl::probabilities(const torch::Tensor& x) { return torch::softmax(forward(x), 1); }

Classifier make_classifier(EncoderPtr encoder, int64_t num_classes, std::uint64_t seed) {
  torch::manual_seed(derive_seed(seed, "finetune/head"));
  Classifier classifier(std::move(encoder), num_classes);
  const auto dtype = classifier->encoder().parameters().front().scalar_type();
  classifier->head()->to(dtype);
  return classifier;
}

void FinetuneConfig::validate() const {
  if (epochs < 0) throw ConfigError("finetune.epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("finetune.learning_rate must be positive");
  if (batch_size < 2) throw ConfigError("finetune.batch_size must be >= 2");
  if (augmentation) augmentation->validate();
}

namespace {

torch::Tensor labels_of(std::span<const Image> images) {
  std::vector<int64_t> labels;
  labels.reserve(images.size());
  for (const auto& im : images) labels.push_back(im.class_id);
  return torch::tensor(labels, torch::kInt64);
}

torch::Tensor batched_forward(ClassifierImpl& classifier, std::span<const Image> images, bool embeddings) {
  torch::NoGradGuard no_grad;
  const auto dtype = classifier.encoder().parameters().front().scalar_type();
  std::vector<torch::Tensor> parts;
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < images.size(); i += kChunk) {
    const auto chunk = images.subspan(i, std::min(kChunk, images.size() - i));
    const auto x = images_to_tensor(chunk).to(dtype);
    parts.push_back(embeddings ? classifier.embed(x) : classifier.forward(x));
  }
  return torch::cat(parts, 0);
}

}  // namespace

std::vector<double> finetune(ClassifierImpl& classifier, const DatasetSplit& split, const FinetuneConfig& config) {
  config.validate();
  if (split.train.empty()) throw ContractViolation("finetune needs training images");
  if (classifier.num_classes() != split.num_classes) {
    throw ContractViolation("classifier head has " + std::to_string(classifier.num_classes()) +
                            " outputs but the split has " + std::to_string(split.num_classes) + " classes");
  }
  for (const auto& im : split.train) {
    if (im.class_id < 0 || im.class_id >= split.num_classes) throw ContractViolation("class_id out of range");
  }

  std::vector<double> trace;
  if (config.epochs == 0) return trace;

  torch::optim::Adam optimizer(classifier.parameters(), torch::optim::AdamOptions(config.learning_rate));
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "finetune/shuffle"));
  std::mt19937_64 augment_rng(derive_seed(config.seed, "finetune/augment"));
  const auto dtype = classifier.encoder().parameters().front().scalar_type();
  const std::size_t n = split.train.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);

  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    classifier.train();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n;) {
      std::size_t stop = std::min(n, start + batch);
      if (n - stop == 1) stop = n;  // no singleton batch for batch norm
      std::vector<Image> images;
      for (std::size_t i = start; i < stop; ++i) {
        const Image& src = split.train[order[i]];
        images.push_back(config.augmentation ? augment_image(src, *config.augmentation, augment_rng) : src);
      }
      optimizer.zero_grad();
      const auto logits = classifier.forward(images_to_tensor(images).to(dtype));
      const auto loss = torch::nn::functional::cross_entropy(logits, labels_of(images));
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw NonFiniteGradientError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      loss.backward();
      optimizer.step();
      total += value * static_cast<double>(stop - start);
      start = stop;
    }
    trace.push_back(total / static_cast<double>(n));
  }
  classifier.eval();
  return trace;
}

double classification_accuracy(ClassifierImpl& classifier, std::span<const Image> images) {
  if (images.empty()) throw ContractViolation("accuracy of an empty image set");
  classifier.eval();
  const auto predicted = batched_forward(classifier, images, false).argmax(1);
  const auto correct = predicted.eq(labels_of(images)).sum().item<int64_t>();
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

namespace {

struct SweepPoint {
  double threshold;
  double far;
  double frr;
};

std::vector<SweepPoint> sweep(std::span<const double> genuine, std::span<const double> impostor, DecisionRule rule) {
  if (genuine.empty() || impostor.empty()) throw ContractViolation("EER needs genuine and impostor scores");
  const double sign = rule == DecisionRule::AcceptHigh ? 1.0 : -1.0;
  std::vector<double> g, im;
  for (double s : genuine) g.push_back(sign * s);
  for (double s : impostor) im.push_back(sign * s);
  for (double s : g) {
    if (std::isnan(s)) throw ContractViolation("NaN verification score");
  }
  for (double s : im) {
    if (std::isnan(s)) throw ContractViolation("NaN verification score");
  }
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());

  std::vector<double> thresholds;
  thresholds.reserve(g.size() + im.size() + 2);
  thresholds.push_back(-std::numeric_limits<double>::infinity());
  thresholds.insert(thresholds.end(), g.begin(), g.end());
  thresholds.insert(thresholds.end(), im.begin(), im.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const auto ng = static_cast<double>(g.size());
  const auto ni = static_cast<double>(im.size());
  std::vector<SweepPoint> points;
  points.reserve(thresholds.size());
  for (double t : thresholds) {
    // accept when score >= t
    const auto rejected_genuine = std::lower_bound(g.begin(), g.end(), t) - g.begin();
    const auto rejected_impostor = std::lower_bound(im.begin(), im.end(), t) - im.begin();
    points.push_back({sign * t, (ni - static_cast<double>(rejected_impostor)) / ni,
                      static_cast<double>(rejected_genuine) / ng});
  }
  return points;
}

}  // namespace

EerResult compute_eer(std::span<const double> genuine, std::span<const double> impostor, DecisionRule rule) {
  const auto points = sweep(genuine, impostor, rule);
  for (std::size_t k = 1; k < points.size(); ++k) {
    const double dk = points[k].far - points[k].frr;
    if (dk > 0.0) continue;
    if (dk == 0.0) return {points[k].far, points[k].threshold};
    const double dp = points[k - 1].far - points[k - 1].frr;
    const double w = dp / (dp - dk);
    const double eer = points[k - 1].far + w * (points[k].far - points[k - 1].far);
    const double t0 = points[k - 1].threshold;
    const double t1 = points[k].threshold;
    double threshold;
    if (std::isfinite(t0) && std::isfinite(t1)) {
      threshold = t0 + w * (t1 - t0);
    } else {
      threshold = std::isfinite(t0) ? t0 : t1;
    }
    return {eer, threshold};
  }
  // Unreachable: the last point has FAR = 0 and FRR = 1.
  return {points.back().frr, points.back().threshold};
}

std::vector<RocPoint> compute_roc(std::span<const double> genuine, std::span<const double> impostor,
                                  DecisionRule rule) {
  const auto points = sweep(genuine, impostor, rule);
  std::vector<RocPoint> roc;
  roc.reserve(points.size());
  for (auto it = points.rbegin(); it != points.rend(); ++it) roc.push_back({it->far, 1.0 - it->frr});
  return roc;
}

VerificationReport evaluate(ClassifierImpl& classifier, const DatasetSplit& split, ScoreSource source) {
  if (split.test.empty()) throw ContractViolation("evaluate needs test images");
  VerificationReport report;
  report.accuracy = classification_accuracy(classifier, split.test);

  std::map<int, int> per_class;
  for (const auto& im : split.test) ++per_class[im.class_id];
  for (const auto& [cls, count] : per_class) {
    if (count == 1) {
      std::cerr << "warning: test class " << cls << " has a single image and contributes no genuine pairs\n";
    }
  }

  torch::Tensor features = source == ScoreSource::EmbeddingCosine
                               ? batched_forward(classifier, split.test, true)
                               : torch::softmax(batched_forward(classifier, split.test, false), 1);
  const auto sims = cosine_similarity_matrix(features.to(torch::kFloat64), features.to(torch::kFloat64)).contiguous();
  const auto acc = sims.accessor<double, 2>();
  const std::size_t n = split.test.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = acc[static_cast<int64_t>(i)][static_cast<int64_t>(j)];
      if (split.test[i].class_id == split.test[j].class_id) {
        report.genuine_scores.push_back(s);
      } else {
        report.impostor_scores.push_back(s);
      }
    }
  }
  if (report.genuine_scores.empty() || report.impostor_scores.empty()) {
    throw ContractViolation("test split yields no genuine or no impostor pairs");
  }
  const auto eer = compute_eer(report.genuine_scores, report.impostor_scores);
  report.eer = eer.eer;
  report.eer_threshold = eer.threshold;
  report.roc = compute_roc(report.genuine_scores, report.impostor_scores);
  return report;
}

std::string report_to_json(const VerificationReport& report, const std::string& config_hash) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["eer"] = report.eer;
  auto roc = nlohmann::json::array();
  for (const auto& p : report.roc) roc.push_back({p.far, p.gar});
  j["roc"] = roc;
  j["config_hash"] = config_hash;
  return j.dump(2) + "\n";
}

void write_report_json(const std::filesystem::path& path, const VerificationReport& report,
                       const std::string& config_hash) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << report_to_json(report, config_hash);
  if (!out) throw IoError("failed writing " + path.string());
}

VerificationReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing report " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    VerificationReport report;
    report.accuracy = j.at("accuracy").get<double>();
    report.eer = j.at("eer").get<double>();
    for (const auto& p : j.at("roc")) report.roc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed report " + path.string() + ": " + e.what());
  }
}

const char* mode_name(PretrainMode mode) {
  switch (mode) {
    case PretrainMode::Scratch: return "scratch";
    case PretrainMode::Simclr: return "simclr";
    case PretrainMode::Amcl: return "amcl";
  }
  return "?";
}

PretrainMode parse_mode(const std::string& name) {
  if (name == "scratch") return PretrainMode::Scratch;
  if (name == "simclr") return PretrainMode::Simclr;
  if (name == "amcl") return PretrainMode::Amcl;
  throw ConfigError("unknown pretraining mode '" + name + "' (expected scratch, simclr or amcl)");
}

void CompareConfig::validate() const {
  if (modes.empty()) throw ConfigError("compare needs at least one mode");
  if (seeds.empty()) throw ConfigError("compare needs at least one seed");
  pretrain.validate();
  finetune.validate();
}

EncoderPtr pretrain_encoder(PretrainMode mode, const DatasetSplit& split, MaskGenerator generator,
                            const ContrastiveConfig& config, std::vector<LossRecord>* history) {
  switch (mode) {
    case PretrainMode::Scratch:
      return initial_encoder(config);
    case PretrainMode::Simclr:
      return run_simclr(split, config, history);
    case PretrainMode::Amcl: {
      if (!generator) throw ContractViolation("amcl pretraining needs a trained generator");
      auto state = run_amcl(split, generator, config);
      if (history) *history = state.history;
      return state.encoder;
    }
  }
  throw ContractViolation("unknown pretraining mode");
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractViolation("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

std::vector<ComparisonRow> compare_pretraining(const DatasetSplit& split, MaskGenerator generator,
                                               const CompareConfig& config, const CompareProgress& progress) {
  config.validate();
  std::vector<ComparisonRow> rows;
  for (PretrainMode mode : config.modes) {
    ComparisonRow row;
    row.mode = mode;
    std::vector<double> accs, eers;
    for (std::uint64_t seed : config.seeds) {
      ContrastiveConfig pretrain = config.pretrain;
      pretrain.seed = seed;
      FinetuneConfig tune = config.finetune;
      tune.seed = seed;
      if (progress) progress(mode, seed, "pretrain");
      auto encoder = pretrain_encoder(mode, split, generator, pretrain);
      auto classifier = make_classifier(encoder, split.num_classes, seed);
      if (progress) progress(mode, seed, "finetune");
      finetune(*classifier, split, tune);
      auto report = evaluate(*classifier, split, config.score_source);
      if (progress) progress(mode, seed, "evaluated");
      row.runs.push_back({seed, report.accuracy, report.eer});
      accs.push_back(report.accuracy);
      eers.push_back(report.eer);
      if (row.runs.size() == 1) row.report = std::move(report);
    }
    row.accuracy = median(accs);
    row.eer = median(eers);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_comparison_csv(const std::filesystem::path& path, std::span<const ComparisonRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(6);
  out << std::fixed << "mode,ACC,EER\n";
  for (const auto& r : rows) out << mode_name(r.mode) << ',' << r.accuracy << ',' << r.eer << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_comparison_runs_csv(const std::filesystem::path& path, std::span<const ComparisonRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(6);
  out << std::fixed << "mode,seed,ACC,EER\n";
  for (const auto& r : rows) {
    for (const auto& run : r.runs) {
      out << mode_name(r.mode) << ',' << run.seed << ',' << run.accuracy << ',' << run.eer << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace amcl
