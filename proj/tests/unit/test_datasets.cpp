#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "amcl/datasets.hpp"
#include "amcl/errors.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

namespace fs = std::filesystem;
using namespace amcl;

namespace {

double mean_abs_diff(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return s / static_cast<double>(a.pixels.size());
}

void write_gray_png(const fs::path& path, int side, unsigned char value) {
  fs::create_directories(path.parent_path());
  cv::Mat m(side, side, CV_8UC1, cv::Scalar(value));
  ASSERT_TRUE(cv::imwrite(path.string(), m));
}

void make_tree(const fs::path& root, int classes, int sessions, int per) {
  for (int c = 0; c < classes; ++c) {
    for (int s = 1; s <= sessions; ++s) {
      for (int k = 0; k < per; ++k) {
        write_gray_png(root / ("class_" + std::to_string(c)) / ("session_" + std::to_string(s)) /
                           ("img_" + std::to_string(k) + ".png"),
                       64, static_cast<unsigned char>(20 * c + k));
      }
    }
  }
}

}  // namespace

TEST(SyntheticData, CountsPerSession) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 20;
  cfg.images_per_class_per_session = 5;
  const auto split = generate_synthetic_dataset(cfg);
  EXPECT_EQ(split.train.size(), 100u);
  EXPECT_EQ(split.test.size(), 100u);
  EXPECT_EQ(split.num_classes, 20);
  EXPECT_NO_THROW(split.validate());
}

TEST(SyntheticData, BitIdenticalForSameSeed) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 4;
  const auto a = generate_synthetic_dataset(cfg);
  const auto b = generate_synthetic_dataset(cfg);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].pixels, b.train[i].pixels);
  for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test[i].pixels, b.test[i].pixels);
  cfg.seed = 43;
  const auto c = generate_synthetic_dataset(cfg);
  EXPECT_NE(a.train[0].pixels, c.train[0].pixels);
}

TEST(SyntheticData, RejectsFewerThanTwoClasses) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 1;
  EXPECT_THROW(generate_synthetic_dataset(cfg), ContractViolation);
}

TEST(SyntheticData, NoiselessImagesFollowTheJitterModel) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 3;
  cfg.noise_level = 0.0;
  const auto ds = generate_synthetic_dataset_detailed(cfg);
  std::mt19937_64 unused(0);
  // Re-render every image from its logged jitter: the stored pixels must be reproduced exactly,
  // so intra-class differences come from the jitter alone.
  for (std::size_t i = 0; i < ds.split.train.size(); ++i) {
    const auto& rec = ds.train_log[i];
    const auto again = render_vein_image(ds.templates[rec.class_id], rec.jitter, ds.sessions[rec.class_id][0], 0.0,
                                         unused);
    EXPECT_EQ(again.pixels, ds.split.train[i].pixels);
  }
  const auto& r0 = ds.train_log[0];
  const auto& r1 = ds.train_log[1];
  ASSERT_EQ(r0.class_id, r1.class_id);
  const auto a = render_vein_image(ds.templates[0], r0.jitter, ds.sessions[0][0], 0.0, unused);
  const auto b = render_vein_image(ds.templates[0], r1.jitter, ds.sessions[0][0], 0.0, unused);
  EXPECT_DOUBLE_EQ(mean_abs_diff(ds.split.train[0], ds.split.train[1]), mean_abs_diff(a, b));

  // A pure brightness change shifts every unclamped pixel by exactly that amount.
  ImageJitter j = r0.jitter;
  const auto base = render_vein_image(ds.templates[0], j, ds.sessions[0][0], 0.0, unused);
  j.brightness += 0.01;
  const auto brighter = render_vein_image(ds.templates[0], j, ds.sessions[0][0], 0.0, unused);
  for (std::size_t i = 0; i < base.pixels.size(); ++i) {
    if (base.pixels[i] > 0.02f && base.pixels[i] < 0.98f) {
      ASSERT_NEAR(brighter.pixels[i] - base.pixels[i], 0.01, 1e-5);
    }
  }
}

TEST(SyntheticData, IntraClassCloserThanInterClass) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 5;
  const auto split = generate_synthetic_dataset(cfg);
  std::vector<Image> all = split.train;
  all.insert(all.end(), split.test.begin(), split.test.end());
  double intra = 0, inter = 0;
  int n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      double d = 0;
      for (std::size_t k = 0; k < all[i].pixels.size(); ++k) {
        const double e = all[i].pixels[k] - all[j].pixels[k];
        d += e * e;
      }
      d = std::sqrt(d);
      if (all[i].class_id == all[j].class_id) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  }
  EXPECT_LT(intra / n_intra, inter / n_inter);
}

TEST(SyntheticData, SplitInvariants) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 6;
  cfg.images_per_class_per_session = 2;
  const auto split = generate_synthetic_dataset(cfg);
  std::set<int> train_classes, test_classes;
  for (const auto& im : split.train) {
    train_classes.insert(im.class_id);
    EXPECT_EQ(im.session_id, 1);
    for (float v : im.pixels) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  for (const auto& im : split.test) {
    test_classes.insert(im.class_id);
    EXPECT_EQ(im.session_id, 2);
  }
  EXPECT_EQ(train_classes, test_classes);
}

TEST(SyntheticData, KeyValueRoundTrip) {
  SyntheticVeinConfig cfg;
  cfg.num_classes = 7;
  cfg.noise_level = 0.125;
  cfg.seed = 99;
  const auto back = synthetic_config_from_text(to_key_value_text(cfg));
  EXPECT_EQ(back.num_classes, 7);
  EXPECT_EQ(back.noise_level, 0.125);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(to_key_value_text(back), to_key_value_text(cfg));
}

TEST(DirectoryLoader, CountsTwoByTwoByThree) {
  ScratchDir dir("loader_counts");
  make_tree(dir.path(), 2, 2, 3);
  const auto split = load_image_directory(dir.path());
  EXPECT_EQ(split.train.size(), 6u);
  EXPECT_EQ(split.test.size(), 6u);
  EXPECT_EQ(split.num_classes, 2);
}

TEST(DirectoryLoader, EmptyDirectory) {
  ScratchDir dir("loader_empty");
  try {
    load_image_directory(dir.path());
    FAIL() << "expected a load error";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("no classes found"), std::string::npos);
  }
}

TEST(DirectoryLoader, MissingSessionNamesThePath) {
  ScratchDir dir("loader_missing");
  make_tree(dir.path(), 2, 2, 1);
  fs::remove_all(dir.path() / "class_1" / "session_2");
  try {
    load_image_directory(dir.path());
    FAIL() << "expected a load error";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("class_1"), std::string::npos);
  }
}

TEST(DirectoryLoader, ClassOnlyInTestSession) {
  ScratchDir dir("loader_only_test");
  make_tree(dir.path(), 2, 2, 1);
  fs::remove_all(dir.path() / "class_0" / "session_1");
  try {
    load_image_directory(dir.path());
    FAIL() << "expected a load error";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("class_0"), std::string::npos);
  }
}

TEST(DirectoryLoader, UnreadableFileNamesThePath) {
  ScratchDir dir("loader_unreadable");
  make_tree(dir.path(), 2, 2, 1);
  const fs::path bad = dir.path() / "class_1" / "session_1" / "broken.png";
  std::ofstream(bad) << "not an image";
  try {
    load_image_directory(dir.path());
    FAIL() << "expected a load error";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.png"), std::string::npos);
  }
}

TEST(DirectoryLoader, CheckerboardResizeMatchesAreaAverage) {
  ScratchDir dir("loader_resize");
  const int side = 200;
  cv::Mat board(side, side, CV_8UC1);
  std::vector<double> src(side * side);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const unsigned char v = ((r / 5 + c / 5) % 2) ? 255 : 0;
      board.at<unsigned char>(r, c) = v;
      src[r * side + c] = v / 255.0;
    }
  }
  const fs::path file = dir.path() / "board.png";
  ASSERT_TRUE(cv::imwrite(file.string(), board));
  const Image im = load_image_file(file);
  const auto expected = oracle::area_resize(src, side, side, kImageSide, kImageSide);
  double worst = 0.0;
  for (std::size_t i = 0; i < im.pixels.size(); ++i) {
    ASSERT_GE(im.pixels[i], 0.0f);
    ASSERT_LE(im.pixels[i], 1.0f);
    worst = std::max(worst, std::abs(im.pixels[i] - expected[i]));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(DirectoryLoader, SaveLoadRoundTripWithinQuantisation) {
  ScratchDir dir("loader_roundtrip");
  SyntheticVeinConfig cfg;
  cfg.num_classes = 3;
  cfg.images_per_class_per_session = 2;
  const auto split = generate_synthetic_dataset(cfg);
  save_image_directory(split, dir.path());
  const auto back = load_image_directory(dir.path());
  ASSERT_EQ(back.train.size(), split.train.size());
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    EXPECT_EQ(back.train[i].class_id, split.train[i].class_id);
    for (std::size_t k = 0; k < split.train[i].pixels.size(); ++k) {
      ASSERT_NEAR(back.train[i].pixels[k], split.train[i].pixels[k], 0.5 / 255.0 + 1e-6);
    }
  }
}
