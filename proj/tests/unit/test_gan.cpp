#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iostream>

#include "amcl/errors.hpp"
#include "amcl/gan.hpp"
#include "amcl/masking.hpp"
#include "amcl/seeds.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

using namespace amcl;

namespace {

std::vector<int64_t> shape_of(const torch::Tensor& t) { return t.sizes().vec(); }

std::vector<Mask> small_corpus(std::size_t n, std::uint64_t seed, double ratio_min = 0.2, double ratio_max = 0.8) {
  MaskSamplerConfig cfg;
  cfg.corpus_size = n;
  cfg.seed = seed;
  cfg.ratio_min = ratio_min;
  cfg.ratio_max = ratio_max;
  return build_mask_corpus(cfg);
}

}  // namespace

TEST(GeneratorArchitecture, LayerShapesFollowTheTable) {
  torch::manual_seed(0);
  MaskGenerator g{GeneratorOptions{}};
  g->eval();
  torch::NoGradGuard no_grad;
  const auto trace = g->forward_trace(torch::randn({2, kLatentDim}));
  ASSERT_EQ(trace.size(), 5u);
  EXPECT_EQ(shape_of(trace[0]), (std::vector<int64_t>{2, 2048, 4, 4}));
  EXPECT_EQ(shape_of(trace[1]), (std::vector<int64_t>{2, 1024, 8, 8}));
  EXPECT_EQ(shape_of(trace[2]), (std::vector<int64_t>{2, 512, 16, 16}));
  EXPECT_EQ(shape_of(trace[3]), (std::vector<int64_t>{2, 256, 32, 32}));
  EXPECT_EQ(shape_of(trace[4]), (std::vector<int64_t>{2, 1, 64, 64}));
  EXPECT_LE(trace[4].abs().max().item<float>(), 1.0f);
}

TEST(GeneratorArchitecture, AcceptsFlatOrSpatialLatents) {
  torch::manual_seed(1);
  MaskGenerator g{GeneratorOptions{.layers = generator_table_layers(16)}};
  g->eval();
  torch::NoGradGuard no_grad;
  const auto z = torch::randn({3, kLatentDim});
  EXPECT_TRUE(torch::equal(g->forward(z), g->forward(z.view({3, kLatentDim, 1, 1}))));
  EXPECT_THROW(g->forward(torch::randn({3, 127})), ContractViolation);
  EXPECT_THROW(g->forward(torch::randn({3, kLatentDim, 2, 2})), ContractViolation);
}

TEST(GeneratorArchitecture, ZeroFinalLayerOutputsZero) {
  torch::manual_seed(2);
  MaskGenerator g{GeneratorOptions{.layers = generator_table_layers(8)}};
  {
    torch::NoGradGuard no_grad;
    g->final_layer()->weight.zero_();
    g->final_layer()->bias.zero_();
  }
  g->eval();
  torch::NoGradGuard no_grad;
  const auto out = g->forward(torch::randn({4, kLatentDim}));
  EXPECT_EQ(out.abs().max().item<float>(), 0.0f);
}

TEST(DiscriminatorArchitecture, LayerShapesFollowTheTable) {
  torch::manual_seed(3);
  MaskDiscriminator d{DiscriminatorOptions{}};
  d->eval();
  torch::NoGradGuard no_grad;
  const auto trace = d->forward_trace(torch::rand({2, 1, 64, 64}));
  ASSERT_EQ(trace.size(), 4u);
  EXPECT_EQ(shape_of(trace[0]), (std::vector<int64_t>{2, 32, 16, 16}));
  EXPECT_EQ(shape_of(trace[1]), (std::vector<int64_t>{2, 64, 8, 8}));
  EXPECT_EQ(shape_of(trace[2]), (std::vector<int64_t>{2, 128, 4, 4}));
  EXPECT_EQ(shape_of(trace[3]), (std::vector<int64_t>{2, 1, 1, 1}));
  EXPECT_THROW(d->forward(torch::rand({2, 1, 32, 32})), ContractViolation);
}

TEST(DiscriminatorArchitecture, ZeroFinalLayerOutputsHalf) {
  torch::manual_seed(4);
  MaskDiscriminator d{DiscriminatorOptions{}};
  {
    torch::NoGradGuard no_grad;
    d->final_layer()->weight.zero_();
    d->final_layer()->bias.zero_();
  }
  d->eval();
  torch::NoGradGuard no_grad;
  const auto p = d->forward(torch::rand({3, 1, 64, 64}));
  EXPECT_TRUE(torch::allclose(p, torch::full_like(p, 0.5), 0.0, 0.0));
}

TEST(DiscriminatorArchitecture, FuzzedOutputsStayInUnitInterval) {
  torch::manual_seed(5);
  MaskDiscriminator d{DiscriminatorOptions{}};
  initialize_dcgan_weights(*d);
  d->eval();
  torch::NoGradGuard no_grad;
  auto gen = make_torch_generator(55);
  for (int chunk = 0; chunk < 10; ++chunk) {
    const auto x = torch::rand({100, 1, 64, 64}, gen) * 2 - 1;
    const auto p = d->forward(x);
    ASSERT_TRUE(torch::isfinite(p).all().item<bool>());
    ASSERT_GT(p.min().item<float>(), 0.0f);
    ASSERT_LT(p.max().item<float>(), 1.0f);
  }
}

TEST(GanTraining, OneStepChangesDiscriminator) {
  torch::manual_seed(6);
  MaskGenerator g{GeneratorOptions{.layers = generator_table_layers(16)}};
  MaskDiscriminator d{DiscriminatorOptions{.layers = discriminator_table_layers(4)}};
  initialize_dcgan_weights(*g);
  initialize_dcgan_weights(*d);
  std::vector<torch::Tensor> before;
  for (const auto& p : d->parameters()) before.push_back(p.detach().clone());
  GanTrainer trainer(g, d, GanTrainConfig{.batch_size = 2});
  const auto corpus = small_corpus(2, 9);
  trainer.step(masks_to_gan_tensor(corpus));
  double change = 0.0;
  const auto after = d->parameters();
  for (std::size_t i = 0; i < after.size(); ++i) change += (after[i] - before[i]).pow(2).sum().item<double>();
  EXPECT_GT(std::sqrt(change), 0.0);
}

TEST(GanTraining, MaskEncodingIsPlusMinusOne) {
  const auto t = masks_to_gan_tensor(std::vector<Mask>{Mask::all_ones(), Mask::all_zeros()});
  EXPECT_EQ(t[0].min().item<float>(), 1.0f);
  EXPECT_EQ(t[1].max().item<float>(), -1.0f);
}

TEST(GanTraining, InitialValueMatchesStraightLineOracle) {
  torch::manual_seed(7);
  MaskGenerator g{GeneratorOptions{.layers = generator_table_layers(8)}};
  MaskDiscriminator d{DiscriminatorOptions{.layers = discriminator_table_layers(2)}};
  initialize_dcgan_weights(*g);
  initialize_dcgan_weights(*d);
  g->train();
  d->train();
  const auto real = masks_to_gan_tensor(small_corpus(8, 3));
  auto gen = make_torch_generator(8);
  const auto z = torch::randn({8, kLatentDim}, gen);
  double value;
  {
    torch::NoGradGuard no_grad;
    value = gan_value(*g, *d, real, z).item<double>();
  }
  const double expected = oracle::gan_value(*g, *d, real, z);
  EXPECT_NEAR(value, expected, 1e-5 * std::max(1.0, std::abs(expected)));
}

TEST(GanTraining, GeneratorGradientMatchesFiniteDifferences) {
  torch::manual_seed(8);
  MaskGenerator g{oracle::toy_generator_options()};
  MaskDiscriminator d{oracle::toy_discriminator_options()};
  initialize_dcgan_weights(*g);
  initialize_dcgan_weights(*d);
  g->to(torch::kFloat64);
  d->to(torch::kFloat64);
  g->train();
  d->train();
  const auto real = masks_to_gan_tensor(small_corpus(4, 4)).to(torch::kFloat64);
  auto gen = make_torch_generator(9);
  const auto z = torch::randn({4, 4}, gen, torch::kFloat64);

  g->zero_grad();
  gan_value(*g, *d, real, z).backward();
  for (auto& item : g->named_parameters()) {
    auto& p = item.value();
    const auto analytic = p.grad().clone();
    const auto fd = oracle::central_difference(
        [&] {
          torch::NoGradGuard no_grad;
          return gan_value(*g, *d, real, z).item<double>();
        },
        p.data(), 1e-6);
    EXPECT_LT(oracle::relative_error(analytic, fd), 1e-3) << item.key();
  }
}

TEST(GanTraining, CollapseDetectorNeedsThreeConsecutiveEpochs) {
  CollapseDetector detector;
  EXPECT_FALSE(detector.observe(1e-7));
  EXPECT_FALSE(detector.observe(1e-7));
  EXPECT_FALSE(detector.observe(0.5));
  EXPECT_FALSE(detector.observe(1e-8));
  EXPECT_FALSE(detector.observe(1e-8));
  EXPECT_TRUE(detector.observe(1e-9));
}

TEST(GanTraining, RejectsEmptyCorpusAndBadConfig) {
  EXPECT_THROW(train_gan({}, GanTrainConfig{}), ContractViolation);
  GanTrainConfig bad;
  bad.beta1 = 1.0;
  EXPECT_ANY_THROW(bad.validate());
}

TEST(GanTraining, ConstantHalfRatioCorpusIsMatched) {
  // Every record occludes exactly 8 of 16 patches.
  const auto corpus = small_corpus(512, 10, 0.5, 0.5);
  GanTrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 32;
  cfg.seed = 10;
  auto result = train_gan(corpus, cfg, GeneratorOptions{.layers = generator_table_layers(16)},
                                DiscriminatorOptions{.layers = discriminator_table_layers(4)});
  ASSERT_EQ(result.trace.size(), 8u);
  auto gen = make_torch_generator(11);
  const auto masks = sample_masks(*result.generator, torch::randn({500, kLatentDim}, gen));
  double mean = 0.0;
  for (const auto& m : masks) mean += m.ratio();
  mean /= static_cast<double>(masks.size());
  EXPECT_NEAR(mean, 0.5, 0.1);
}

TEST(SampleMasks, ShapeAndDeterminism) {
  torch::manual_seed(12);
  MaskGenerator g{GeneratorOptions{.layers = generator_table_layers(16)}};
  initialize_dcgan_weights(*g);
  g->train();
  const auto z = torch::randn({1, kLatentDim});
  const auto a = sample_masks(*g, z);
  const auto b = sample_masks(*g, z);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].grid.size(), 4096u);
  EXPECT_EQ(a[0], b[0]);
  EXPECT_TRUE(g->is_training());
  const auto snapped = sample_masks(*g, z, 16);
  EXPECT_TRUE(snapped[0].is_patch_aligned(16));
}

TEST(SampleMasks, BinarisationIsMonotone) {
  auto gen = make_torch_generator(13);
  const auto field = torch::rand({1000}, gen) * 2 - 1;
  const auto raised = field + torch::rand({1000}, gen);
  const auto a = binarize_mask_field(field);
  const auto b = binarize_mask_field(raised);
  EXPECT_TRUE((b >= a).all().item<bool>());
  EXPECT_EQ(binarize_mask_field(torch::zeros({1})).item<float>(), 0.0f);
}

TEST(SampleMasks, StraightThroughPassesGradientUnchanged) {
  auto field = torch::tensor({-0.3, 0.2, 0.9}, torch::kFloat64).requires_grad_(true);
  const auto m = straight_through_masks(field);
  EXPECT_TRUE(torch::equal(m.detach(), torch::tensor({0.0, 1.0, 1.0}, torch::kFloat64)));
  (m * torch::tensor({1.0, 2.0, 3.0}, torch::kFloat64)).sum().backward();
  EXPECT_TRUE(torch::equal(field.grad(), torch::tensor({1.0, 2.0, 3.0}, torch::kFloat64)));
}

TEST(SampleMasks, TrainedOnDefaultCorpusMostlyInsideRatioBand) {
  GanTrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 64;
  cfg.seed = 14;
  auto result = train_gan(small_corpus(1024, 14), cfg, GeneratorOptions{.layers = generator_table_layers(16)},
                                DiscriminatorOptions{.layers = discriminator_table_layers(4)});
  auto gen = make_torch_generator(15);
  const auto masks = sample_masks(*result.generator, torch::randn({1000, kLatentDim}, gen));
  int inside = 0;
  for (const auto& m : masks) inside += m.ratio() >= 0.1 && m.ratio() <= 0.9;
  // Logged only: a desk-scale GAN is not guaranteed to match the band.
  std::cout << "[ info ] fraction of generated masks with ratio in [0.1, 0.9]: " << inside / 1000.0 << '\n';
  RecordProperty("ratio_band_mass", std::to_string(inside / 1000.0));
}

TEST(GanCheckpoint, RoundTripAndArchitectureCheck) {
  ScratchDir dir("gan_ckpt");
  torch::manual_seed(16);
  GeneratorOptions opts{.layers = generator_table_layers(16)};
  MaskGenerator g{opts};
  initialize_dcgan_weights(*g);
  save_generator(dir.path() / "g.ckpt", *g);
  auto back = load_generator(dir.path() / "g.ckpt", &opts);
  g->eval();
  back->eval();
  torch::NoGradGuard no_grad;
  const auto z = torch::randn({2, kLatentDim});
  EXPECT_TRUE(torch::equal(g->forward(z), back->forward(z)));

  GeneratorOptions other{.layers = generator_table_layers(8)};
  EXPECT_THROW(load_generator(dir.path() / "g.ckpt", &other), CheckpointError);

  MaskDiscriminator d{DiscriminatorOptions{}};
  save_discriminator(dir.path() / "d.ckpt", *d);
  EXPECT_THROW(load_generator(dir.path() / "d.ckpt"), CheckpointError);
  EXPECT_NO_THROW(load_discriminator(dir.path() / "d.ckpt"));
}

TEST(GanCheckpoint, LossTraceCsv) {
  ScratchDir dir("gan_trace");
  write_gan_trace_csv(dir.path() / "loss.csv", std::vector<GanEpochLoss>{{1, 1.5, 0.5}, {2, 1.25, 0.75}});
  std::ifstream in(dir.path() / "loss.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,d_loss,g_loss");
  EXPECT_EQ(row.substr(0, 2), "1,");
}
