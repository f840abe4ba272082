#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "amcl/augment.hpp"
#include "amcl/contrastive.hpp"
#include "amcl/datasets.hpp"
#include "amcl/errors.hpp"
#include "amcl/gan.hpp"
#include "amcl/seeds.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

using namespace amcl;

namespace {

ContrastiveLossOptions literal() { return {}; }

MaskGenerator saturated_generator(double bias) {
  MaskGenerator g{oracle::toy_generator_options()};
  torch::NoGradGuard no_grad;
  g->final_layer()->weight.zero_();
  g->final_layer()->bias.fill_(bias);
  g->to(torch::kFloat64);
  return g;
}

EncoderPtr toy_encoder(std::uint64_t seed) {
  torch::manual_seed(seed);
  auto e = make_encoder(oracle::toy_encoder_options());
  e->to(torch::kFloat64);
  return e;
}

}  // namespace

TEST(Cosine, WorkedExamples) {
  const std::vector<double> e1{1, 0}, e2{0, 1};
  EXPECT_DOUBLE_EQ(cosine_similarity(e1, e1), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(e1, e2), 0.0);
  const std::vector<double> u{1, 2, 3}, v{4, 5, 6};
  EXPECT_NEAR(cosine_similarity(u, v), 32.0 / (std::sqrt(14.0) * std::sqrt(77.0)), 1e-15);
  EXPECT_NEAR(cosine_similarity(u, v), 0.9746, 1e-4);
}

TEST(Cosine, ZeroVectorIsZero) {
  const std::vector<double> z{0, 0, 0}, u{1, 2, 3};
  EXPECT_EQ(cosine_similarity(z, u), 0.0);
  const auto m = cosine_similarity_matrix(torch::zeros({1, 3}), torch::ones({2, 3}));
  EXPECT_EQ(m.abs().max().item<float>(), 0.0f);
}

TEST(ContrastiveLoss, TwoOrthogonalPairsGiveMinusOne) {
  const auto a = torch::tensor({{1.0, 0.0}, {0.0, 1.0}}, torch::kFloat64);
  EXPECT_NEAR(contrastive_loss(a, a, literal()).item<double>(), -1.0, 1e-12);
}

TEST(ContrastiveLoss, IdenticalEmbeddingsGiveLogNMinusOne) {
  for (int n : {2, 3, 8}) {
    const auto a = torch::ones({n, 5}, torch::kFloat64);
    EXPECT_NEAR(contrastive_loss(a, a, literal()).item<double>(), std::log(n - 1.0), 1e-12);
  }
}

TEST(ContrastiveLoss, MatchesDoubleLoopOracle) {
  auto gen = make_torch_generator(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = torch::randn({8, 16}, gen, torch::kFloat64);
    const auto b = torch::randn({8, 16}, gen, torch::kFloat64);
    for (bool include : {false, true}) {
      for (double tau : {1.0, 0.5}) {
        const double got = contrastive_loss(a, b, {tau, include}).item<double>();
        const double want = oracle::contrastive_loss(oracle::to_matrix(a), oracle::to_matrix(b), tau, include);
        ASSERT_NEAR(got, want, 1e-6);
      }
    }
  }
}

TEST(ContrastiveLoss, NeedsTwoAnchors) {
  const auto a = torch::ones({1, 4}, torch::kFloat64);
  EXPECT_THROW(contrastive_loss(a, a, literal()), ContractViolation);
}

TEST(ContrastiveLoss, PermutationEquivariant) {
  auto gen = make_torch_generator(2);
  const auto a = torch::randn({6, 8}, gen, torch::kFloat64);
  const auto b = torch::randn({6, 8}, gen, torch::kFloat64);
  const auto perm = torch::tensor(std::vector<int64_t>{3, 0, 5, 1, 4, 2});
  const double base = contrastive_loss(a, b, literal()).item<double>();
  const double permuted = contrastive_loss(a.index_select(0, perm), b.index_select(0, perm), literal()).item<double>();
  EXPECT_NEAR(base, permuted, 1e-9);
}

TEST(ContrastiveLoss, RaisingPositiveSimilarityLowersLoss) {
  // a_0 = e0, a_1 = e1, b_1 = e1 and b_0 = s e0 + sqrt(1 - s^2) e2, so S_00 = s while every
  // other similarity is fixed: S_01 = 0, S_10 = 0, S_11 = 1. The loss is (-s - 1) / 2.
  const auto e = torch::eye(3, torch::kFloat64);
  const auto anchors = torch::stack({e[0], e[1]});
  double last = std::numeric_limits<double>::infinity();
  for (double s = -0.9; s <= 0.95; s += 0.15) {
    const auto positives = torch::stack({s * e[0] + std::sqrt(1 - s * s) * e[2], e[1]});
    const double l = contrastive_loss(anchors, positives, literal()).item<double>();
    EXPECT_NEAR(l, (-s - 1.0) / 2.0, 1e-12);
    EXPECT_LT(l, last);
    last = l;
  }
}

TEST(ContrastiveLoss, EncoderGradientMatchesFiniteDifferences) {
  auto encoder = toy_encoder(4);
  encoder->train();
  const auto va = oracle::random_views(3, 40);
  const auto vb = oracle::random_views(3, 41);
  encoder->zero_grad();
  simclr_loss(va, vb, *encoder, literal()).backward();
  for (auto& item : encoder->named_parameters()) {
    const auto analytic = item.value().grad().clone();
    const auto fd = oracle::central_difference(
        [&] {
          torch::NoGradGuard no_grad;
          return simclr_loss(va, vb, *encoder, literal()).item<double>();
        },
        item.value().data(), 1e-6);
    EXPECT_LT(oracle::relative_error(analytic, fd), 1e-3) << item.key();
  }
}

TEST(MaskedLoss, AllOnesMasksEqualPlainLoss) {
  auto encoder = toy_encoder(5);
  encoder->eval();
  auto g = saturated_generator(5.0);
  const auto va = oracle::random_views(4, 50);
  const auto vb = oracle::random_views(4, 51);
  const auto zs = torch::randn({4, 4}, torch::kFloat64);
  const auto masked = masked_simclr_loss(va, vb, zs, *encoder, *g, literal());
  EXPECT_EQ(masked.masks.min().item<double>(), 1.0);
  EXPECT_NEAR(masked.loss.item<double>(), simclr_loss(va, vb, *encoder, literal()).item<double>(), 1e-9);
}

TEST(MaskedLoss, AllZeroMasksMatchOracleOnZeroAnchors) {
  auto encoder = toy_encoder(6);
  encoder->eval();
  auto g = saturated_generator(-5.0);
  const auto va = oracle::random_views(4, 60);
  const auto vb = oracle::random_views(4, 61);
  const auto masked = masked_simclr_loss(va, vb, torch::randn({4, 4}, torch::kFloat64), *encoder, *g, literal());
  EXPECT_EQ(masked.masks.max().item<double>(), 0.0);
  torch::NoGradGuard no_grad;
  const auto a = oracle::to_matrix(encoder->forward(torch::zeros({4, 1, 64, 64}, torch::kFloat64)));
  const auto b = oracle::to_matrix(encoder->forward(vb));
  EXPECT_NEAR(masked.loss.item<double>(), oracle::contrastive_loss(a, b, 1.0, false), 1e-6);
}

TEST(MaskedLoss, RandomLatentsMatchOracle) {
  auto encoder = toy_encoder(7);
  encoder->eval();
  torch::manual_seed(70);
  MaskGenerator g{oracle::toy_generator_options()};
  initialize_dcgan_weights(*g);
  g->to(torch::kFloat64);
  const auto va = oracle::random_views(4, 71);
  const auto vb = oracle::random_views(4, 72);
  auto gen = make_torch_generator(73);
  const auto zs = torch::randn({4, 4}, gen, torch::kFloat64);
  const auto masked = masked_simclr_loss(va, vb, zs, *encoder, *g, literal());
  g->eval();
  torch::Tensor hard;
  {
    torch::NoGradGuard no_grad;
    hard = (g->forward(zs) > 0).to(torch::kFloat64);
  }
  const auto want = oracle::adversarial_objective(va, vb, hard, *encoder, 1.0, false, 0.0);
  EXPECT_NEAR(masked.loss.item<double>(), want.loss, 1e-6);
}

TEST(MaskedLoss, ViewBatchOverloadFillsMaskedViews) {
  auto encoder = toy_encoder(8);
  encoder->eval();
  auto g = saturated_generator(-5.0);
  SyntheticVeinConfig cfg;
  cfg.num_classes = 2;
  cfg.images_per_class_per_session = 2;
  const auto split = generate_synthetic_dataset(cfg);
  std::mt19937_64 rng(8);
  ViewBatch views = augment_views(split.train, AugmentationPolicy{}, rng);
  masked_simclr_loss(views, torch::randn({4, 4}, torch::kFloat64), *encoder, *g, literal());
  ASSERT_TRUE(views.view_a_masked.has_value());
  ASSERT_EQ(views.view_a_masked->size(), 4u);
  for (const auto& im : *views.view_a_masked) {
    EXPECT_TRUE(std::all_of(im.pixels.begin(), im.pixels.end(), [](float v) { return v == 0.0f; }));
  }
  EXPECT_THROW(masked_simclr_loss(views, torch::randn({3, 4}, torch::kFloat64), *encoder, *g, literal()),
               ContractViolation);
}

TEST(Encoder, DefaultShapeDeterminismAndLocalLipschitz) {
  torch::manual_seed(9);
  auto e = make_encoder(EncoderOptions{});
  EXPECT_EQ(e->embed_dim(), 512);
  EXPECT_EQ(e->architecture_id(), "resnet-small");
  e->eval();
  e->to(torch::kFloat64);
  torch::NoGradGuard no_grad;
  const auto x = oracle::random_views(2, 90);
  const auto y1 = e->forward(x);
  const auto y2 = e->forward(x);
  EXPECT_EQ(y1.sizes().vec(), (std::vector<int64_t>{2, 512}));
  EXPECT_TRUE(torch::equal(y1, y2));
  const auto d = oracle::random_views(2, 91) - 0.5;
  const double eps = 1e-4;
  const double step1 = (e->forward(x + eps * d) - y1).norm().item<double>();
  const double step2 = (e->forward(x + 0.5 * eps * d) - y1).norm().item<double>();
  EXPECT_GT(step1, 0.0);
  EXPECT_NEAR(step1 / step2, 2.0, 0.2);
  EXPECT_THROW(e->forward(torch::zeros({1, 1, 32, 32}, torch::kFloat64)), ContractViolation);
}

TEST(Encoder, RegistryAndProjectionHead) {
  const auto names = registered_encoders();
  EXPECT_NE(std::find(names.begin(), names.end(), "resnet-small"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "conv-small"), names.end());
  EncoderOptions bad;
  bad.architecture_id = "nope";
  EXPECT_THROW(make_encoder(bad), ContractViolation);
  EncoderOptions o;
  o.architecture_id = "conv-small";
  o.base_width = 4;
  o.embed_dim = 16;
  o.projection_head = true;
  o.projection_dim = 8;
  auto e = make_encoder(o);
  torch::NoGradGuard no_grad;
  EXPECT_EQ(e->forward(torch::zeros({2, 1, 64, 64})).size(1), 16);
  EXPECT_EQ(e->contrastive_features(torch::zeros({2, 1, 64, 64})).size(1), 8);
}

TEST(Encoder, CheckpointRefusesOtherArchitecture) {
  ScratchDir dir("encoder_ckpt");
  torch::manual_seed(10);
  auto e = make_encoder(oracle::toy_encoder_options());
  save_encoder(dir.path() / "e.ckpt", *e);
  auto back = load_encoder(dir.path() / "e.ckpt", "toy");
  torch::NoGradGuard no_grad;
  const auto x = torch::rand({2, 1, 64, 64});
  e->eval();
  back->eval();
  EXPECT_TRUE(torch::equal(e->forward(x), back->forward(x)));
  EXPECT_THROW(load_encoder(dir.path() / "e.ckpt", "resnet-small"), CheckpointError);
}

TEST(Augment, IdentityPolicyReturnsOriginals) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 2;
  cfg.images_per_class_per_session = 2;
  const auto split = generate_synthetic_dataset(cfg);
  std::mt19937_64 rng(11);
  const auto views = augment_views(split.train, AugmentationPolicy::identity(), rng);
  for (std::size_t i = 0; i < views.size(); ++i) {
    EXPECT_EQ(views.view_a[i].pixels, split.train[i].pixels);
    EXPECT_EQ(views.view_b[i].pixels, split.train[i].pixels);
  }
}

TEST(Augment, FlipOnlyMirrorsHorizontally) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 2;
  cfg.images_per_class_per_session = 1;
  const auto split = generate_synthetic_dataset(cfg);
  auto policy = AugmentationPolicy::identity();
  policy.flip_prob = 1.0;
  std::mt19937_64 rng(12);
  const auto views = augment_views(split.train, policy, rng);
  for (std::size_t i = 0; i < views.size(); ++i) {
    for (int r = 0; r < 64; ++r) {
      for (int c = 0; c < 64; ++c) {
        ASSERT_EQ(views.view_a[i].at(r, c), split.train[i].at(r, 63 - c));
      }
    }
  }
}

TEST(Augment, RandomPoliciesKeepShapeAndRange) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 3;
  cfg.images_per_class_per_session = 2;
  const auto split = generate_synthetic_dataset(cfg);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    AugmentationPolicy p;
    p.crop_scale_min = 0.2 + 0.5 * u(rng);
    p.crop_scale_max = std::min(1.0, p.crop_scale_min + 0.3);
    p.flip_prob = u(rng);
    p.jitter_strength = u(rng);
    p.blur_prob = u(rng);
    const auto views = augment_views(split.train, p, rng);
    EXPECT_NO_THROW(views.validate());
    for (const auto& im : views.view_a) {
      ASSERT_EQ(im.pixels.size(), 4096u);
      for (float v : im.pixels) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    }
  }
  std::mt19937_64 r1(99), r2(99);
  const auto a = augment_views(split.train, AugmentationPolicy{}, r1);
  const auto b = augment_views(split.train, AugmentationPolicy{}, r2);
  EXPECT_EQ(a.view_a[0].pixels, b.view_a[0].pixels);
}

TEST(ContrastiveConfig, Validation) {
  ContrastiveConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lambda_reg = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  EXPECT_EQ(c.latent_set_k(), c.batch_size);
}
