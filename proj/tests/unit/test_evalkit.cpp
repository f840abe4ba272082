#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "amcl/errors.hpp"
#include "amcl/evalkit.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

using namespace amcl;

namespace {

Image stripe_image(int cls, float level) {
  Image im;
  im.class_id = cls;
  for (int r = 0; r < kImageSide; ++r) {
    for (int c = 0; c < kImageSide; ++c) {
      const bool lit = cls == 0 ? c < kImageSide / 2 : c >= kImageSide / 2;
      im.at(r, c) = lit ? level : 0.05f;
    }
  }
  return im;
}

DatasetSplit separable_split() {
  DatasetSplit split;
  split.num_classes = 2;
  for (int i = 0; i < 5; ++i) {
    for (int cls = 0; cls < 2; ++cls) {
      split.train.push_back(stripe_image(cls, 0.5f + 0.1f * i));
      split.test.push_back(stripe_image(cls, 0.55f + 0.1f * i));
    }
  }
  return split;
}

Classifier toy_classifier(std::uint64_t seed, int classes = 2) {
  torch::manual_seed(seed);
  return make_classifier(make_encoder(oracle::toy_encoder_options()), classes, seed);
}

}  // namespace

TEST(Eer, PerfectSeparationIsZero) {
  const std::vector<double> g{0.9, 0.8}, i{0.1, 0.2};
  EXPECT_EQ(compute_eer(g, i).eer, 0.0);
}

TEST(Eer, IdenticalDistributionsGiveOneHalf) {
  const std::vector<double> s{0.6, 0.4};
  EXPECT_NEAR(compute_eer(s, s).eer, 0.5, 1e-12);
  const std::vector<double> flat{0.5, 0.5};
  EXPECT_NEAR(compute_eer(flat, flat).eer, 0.5, 1e-12);
}

TEST(Eer, MatchesCountingOracleOnRandomSets) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 20);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> g(50), im(200);
    const bool ties = trial % 2 == 0;
    for (auto& s : g) s = ties ? coarse(rng) / 20.0 + 0.1 : nd(rng) + 1.0;
    for (auto& s : im) s = ties ? coarse(rng) / 20.0 : nd(rng);
    ASSERT_NEAR(compute_eer(g, im).eer, oracle::eer(g, im), 1e-9) << trial;
  }
}

TEST(Eer, AcceptLowEqualsNegatedScores) {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> g(30), im(60), ng, ni;
  for (auto& s : g) s = nd(rng);
  for (auto& s : im) s = nd(rng) + 1.0;  // distances: genuine low
  for (double s : g) ng.push_back(-s);
  for (double s : im) ni.push_back(-s);
  const auto low = compute_eer(g, im, DecisionRule::AcceptLow);
  const auto high = compute_eer(ng, ni);
  EXPECT_NEAR(low.eer, high.eer, 1e-12);
  EXPECT_NEAR(low.threshold, -high.threshold, 1e-12);
}

TEST(Eer, RejectsEmptyOrNan) {
  const std::vector<double> g{0.5}, empty;
  EXPECT_THROW(compute_eer(g, empty), ContractViolation);
  const std::vector<double> bad{std::nan("")};
  EXPECT_THROW(compute_eer(g, bad), ContractViolation);
}

TEST(Roc, EndpointsAndMonotone) {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> g(40), im(80);
  for (auto& s : g) s = nd(rng) + 0.7;
  for (auto& s : im) s = nd(rng);
  const auto roc = compute_roc(g, im);
  EXPECT_EQ(roc.front().far, 0.0);
  EXPECT_EQ(roc.front().gar, 0.0);
  EXPECT_EQ(roc.back().far, 1.0);
  EXPECT_EQ(roc.back().gar, 1.0);
  for (std::size_t k = 1; k < roc.size(); ++k) {
    EXPECT_GE(roc[k].far, roc[k - 1].far);
    EXPECT_GE(roc[k].gar, roc[k - 1].gar);
  }
}

TEST(Classifier, ProbabilitiesSumToOne) {
  auto c = toy_classifier(1, 5);
  torch::NoGradGuard no_grad;
  const auto p = c->probabilities(oracle::random_views(3, 2, torch::kFloat32));
  EXPECT_EQ(p.sizes().vec(), (std::vector<int64_t>{3, 5}));
  EXPECT_LT((p.sum(1) - 1).abs().max().item<float>(), 1e-6f);
}

TEST(Finetune, ZeroEpochsChangesNothing) {
  auto c = toy_classifier(3);
  std::vector<torch::Tensor> before;
  for (const auto& p : c->parameters()) before.push_back(p.detach().clone());
  FinetuneConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(finetune(*c, separable_split(), cfg).empty());
  auto after = c->parameters();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(torch::equal(before[i], after[i]));
}

TEST(Finetune, SeparableToyReachesFullAccuracy) {
  auto c = toy_classifier(4);
  const auto split = separable_split();
  FinetuneConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-2;
  const auto trace = finetune(*c, split, cfg);
  ASSERT_EQ(trace.size(), 50u);
  for (double v : trace) EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(trace.back(), trace.front());
  EXPECT_EQ(classification_accuracy(*c, split.train), 1.0);
  EXPECT_EQ(classification_accuracy(*c, split.test), 1.0);
}

TEST(Finetune, ClassCountMismatchIsRejected) {
  auto c = toy_classifier(5, 3);
  EXPECT_THROW(finetune(*c, separable_split(), FinetuneConfig{}), ContractViolation);
}

TEST(Finetune, BadConfigIsConfigError) {
  FinetuneConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.epochs = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Evaluate, PairCountsAndScoreRange) {
  auto c = toy_classifier(6);
  const auto split = separable_split();
  for (auto source : {ScoreSource::EmbeddingCosine, ScoreSource::Posterior}) {
    const auto report = evaluate(*c, split, source);
    // 10 test images, 5 per class: 2 * C(5, 2) genuine pairs, 25 impostor pairs.
    EXPECT_EQ(report.genuine_scores.size(), 20u);
    EXPECT_EQ(report.impostor_scores.size(), 25u);
    for (double s : report.genuine_scores) EXPECT_LE(std::abs(s), 1.0 + 1e-9);
    EXPECT_NEAR(report.eer, oracle::eer(report.genuine_scores, report.impostor_scores), 1e-9);
  }
}

TEST(Report, JsonRoundTrip) {
  ScratchDir dir("report_json");
  VerificationReport r;
  r.accuracy = 0.75;
  r.eer = 0.125;
  r.roc = {{0.0, 0.0}, {0.25, 0.5}, {1.0, 1.0}};
  write_report_json(dir.path() / "r.json", r, "deadbeef");
  const auto back = read_report_json(dir.path() / "r.json");
  EXPECT_EQ(back.accuracy, 0.75);
  EXPECT_EQ(back.eer, 0.125);
  ASSERT_EQ(back.roc.size(), 3u);
  EXPECT_EQ(back.roc[1].gar, 0.5);
  const auto text = report_to_json(r, "deadbeef");
  EXPECT_LT(text.find("\"accuracy\""), text.find("\"eer\""));
  EXPECT_NE(text.find("\"config_hash\": \"deadbeef\""), std::string::npos);
  EXPECT_THROW(read_report_json(dir.path() / "missing.json"), MissingArtifactError);
}

TEST(Compare, SingleModeYieldsOneRowAndIsDeterministic) {
  SyntheticVeinConfig data;
  data.num_classes = 3;
  data.images_per_class_per_session = 2;
  const auto split = generate_synthetic_dataset(data);
  CompareConfig cfg;
  cfg.modes = {PretrainMode::Simclr};
  cfg.seeds = {0, 1};
  cfg.pretrain.batch_size = 4;
  cfg.pretrain.epochs = 1;
  cfg.pretrain.encoder = oracle::toy_encoder_options();
  cfg.finetune.epochs = 2;
  cfg.finetune.batch_size = 4;
  const auto a = compare_pretraining(split, MaskGenerator{nullptr}, cfg);
  const auto b = compare_pretraining(split, MaskGenerator{nullptr}, cfg);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].mode, PretrainMode::Simclr);
  ASSERT_EQ(a[0].runs.size(), 2u);
  EXPECT_EQ(a[0].accuracy, b[0].accuracy);
  EXPECT_EQ(a[0].eer, b[0].eer);
  EXPECT_DOUBLE_EQ(a[0].eer, 0.5 * (a[0].runs[0].eer + a[0].runs[1].eer));

  cfg.modes = {PretrainMode::Amcl};
  EXPECT_THROW(compare_pretraining(split, MaskGenerator{nullptr}, cfg), ContractViolation);
}

TEST(Compare, ModeNamesAndMedian) {
  for (auto m : {PretrainMode::Scratch, PretrainMode::Simclr, PretrainMode::Amcl}) {
    EXPECT_EQ(parse_mode(mode_name(m)), m);
  }
  EXPECT_THROW(parse_mode("moco"), ConfigError);
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0}), 2.5);
}
