#include "amcl/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "amcl/errors.hpp"
#include "amcl/seeds.hpp"

namespace amcl {

namespace fs = std::filesystem;

void DatasetSplit::validate(int train_session, int test_session) const {
  if (num_classes <= 0) throw ContractViolation("dataset split has no classes");
  std::set<int> train_classes;
  for (const Image& image : train) {
    validate_image(image);
    if (image.session_id != train_session) {
      throw ContractViolation("train image from session " + std::to_string(image.session_id));
    }
    if (image.class_id < 0 || image.class_id >= num_classes) {
      throw ContractViolation("train class id out of range: " + std::to_string(image.class_id));
    }
    train_classes.insert(image.class_id);
  }
  for (const Image& image : test) {
    validate_image(image);
    if (image.session_id != test_session) {
      throw ContractViolation("test image from session " + std::to_string(image.session_id));
    }
    if (!train_classes.contains(image.class_id)) {
      throw ContractViolation("test class " + std::to_string(image.class_id) +
                              " has no training images");
    }
  }
}

void SyntheticVeinConfig::validate() const {
  if (num_classes < 2) {
    throw ContractViolation("synthetic dataset needs num_classes >= 2 for verification metrics");
  }
  if (images_per_class_per_session < 1) {
    throw ContractViolation("images_per_class_per_session must be positive");
  }
  if (vessel_count_min < 1 || vessel_count_max < vessel_count_min) {
    throw ContractViolation("vessel count range must be non-empty and positive");
  }
  if (!(vessel_width_min > 0.0) || vessel_width_max < vessel_width_min) {
    throw ContractViolation("vessel width range must be non-empty and positive");
  }
  if (!(noise_level >= 0.0)) throw ContractViolation("noise_level must be non-negative");
  if (max_rotation_rad < 0 || max_shift_px < 0 || max_scale_delta < 0 ||
      max_brightness_delta < 0 || session_brightness_delta < 0 || session_contrast_delta < 0) {
    throw ContractViolation("jitter magnitudes must be non-negative");
  }
}

namespace {

using Point = std::array<double, 2>;

constexpr int kCurveSamples = 32;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

Point transform(const Point& p, const ImageJitter& j) {
  constexpr double c = kImageSide / 2.0;
  const double x = p[0] - c;
  const double y = p[1] - c;
  const double cs = std::cos(j.rotation);
  const double sn = std::sin(j.rotation);
  return {j.scale * (cs * x - sn * y) + c + j.dx, j.scale * (sn * x + cs * y) + c + j.dy};
}

double segment_distance(double px, double py, const Point& a, const Point& b) {
  const double vx = b[0] - a[0];
  const double vy = b[1] - a[1];
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - a[0]) * vx + (py - a[1]) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a[0] + t * vx);
  const double dy = py - (a[1] + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

std::vector<Point> bezier_polyline(const Point& p0, const Point& p1, const Point& p2) {
  std::vector<Point> pts(kCurveSamples + 1);
  for (int i = 0; i <= kCurveSamples; ++i) {
    const double t = static_cast<double>(i) / kCurveSamples;
    const double a = (1 - t) * (1 - t);
    const double b = 2 * (1 - t) * t;
    const double c = t * t;
    pts[i] = {a * p0[0] + b * p1[0] + c * p2[0], a * p0[1] + b * p1[1] + c * p2[1]};
  }
  return pts;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool parse_prefixed_int(const std::string& name, const std::string& prefix, int& out) {
  if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) return false;
  const std::string digits = name.substr(prefix.size());
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    return false;
  }
  out = std::stoi(digits);
  return true;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm";
}

}  // namespace

IdentityTemplate make_identity_template(const SyntheticVeinConfig& config, std::mt19937_64& rng) {
  IdentityTemplate identity;
  identity.background = uniform(rng, 0.55, 0.75);
  const int count =
      std::uniform_int_distribution<int>(config.vessel_count_min, config.vessel_count_max)(rng);
  constexpr double side = kImageSide;
  for (int i = 0; i < count; ++i) {
    VesselStroke stroke;
    // Vessels cross the ROI roughly end to end, mostly along the long axis of the palm.
    const bool vertical = uniform(rng, 0.0, 1.0) < 0.6;
    const double start = uniform(rng, 0.0, side);
    const double end = std::clamp(start + uniform(rng, -24.0, 24.0), 0.0, side);
    if (vertical) {
      stroke.p0 = {start, uniform(rng, -4.0, 8.0)};
      stroke.p2 = {end, uniform(rng, side - 8.0, side + 4.0)};
    } else {
      stroke.p0 = {uniform(rng, -4.0, 8.0), start};
      stroke.p2 = {uniform(rng, side - 8.0, side + 4.0), end};
    }
    stroke.p1 = {uniform(rng, 8.0, side - 8.0), uniform(rng, 8.0, side - 8.0)};
    stroke.width = uniform(rng, config.vessel_width_min, config.vessel_width_max);
    stroke.depth = uniform(rng, 0.2, 0.4);
    identity.strokes.push_back(stroke);
  }
  return identity;
}

Image render_vein_image(const IdentityTemplate& identity, const ImageJitter& jitter,
                        const SessionShift& session, double noise_level,
                        std::mt19937_64& noise_rng) {
  std::vector<float> darkness(kImagePixels, 0.0f);
  for (const VesselStroke& stroke : identity.strokes) {
    const auto pts = bezier_polyline(transform(stroke.p0, jitter), transform(stroke.p1, jitter),
                                     transform(stroke.p2, jitter));
    const double half = 0.5 * stroke.width * jitter.scale;
    for (int r = 0; r < kImageSide; ++r) {
      for (int c = 0; c < kImageSide; ++c) {
        const double px = c + 0.5;
        const double py = r + 0.5;
        double d = std::numeric_limits<double>::max();
        for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
          d = std::min(d, segment_distance(px, py, pts[k], pts[k + 1]));
        }
        // One-pixel linear ramp at the vessel edge.
        const double coverage = std::clamp(half + 0.5 - d, 0.0, 1.0);
        float& dark = darkness[static_cast<std::size_t>(r * kImageSide + c)];
        dark = std::max(dark, static_cast<float>(stroke.depth * coverage));
      }
    }
  }

  std::normal_distribution<double> noise(0.0, noise_level > 0 ? noise_level : 1.0);
  Image image;
  for (int i = 0; i < kImagePixels; ++i) {
    double v = identity.background - darkness[static_cast<std::size_t>(i)];
    v = session.gain * (v - 0.5) + 0.5 + session.offset + jitter.brightness;
    if (noise_level > 0) v += noise(noise_rng);
    image.pixels[static_cast<std::size_t>(i)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return image;
}

SyntheticDataset generate_synthetic_dataset_detailed(const SyntheticVeinConfig& config) {
  config.validate();
  SyntheticDataset out;
  std::mt19937_64 rng(derive_seed(config.seed, "synthetic/templates"));
  std::mt19937_64 noise_rng(derive_seed(config.seed, "synthetic/noise"));

  out.templates.reserve(static_cast<std::size_t>(config.num_classes));
  for (int c = 0; c < config.num_classes; ++c) {
    out.templates.push_back(make_identity_template(config, rng));
  }
  for (int c = 0; c < config.num_classes; ++c) {
    std::array<SessionShift, 2> shifts;
    for (auto& shift : shifts) {
      shift.gain = 1.0 + uniform(rng, -config.session_contrast_delta, config.session_contrast_delta);
      shift.offset = uniform(rng, -config.session_brightness_delta, config.session_brightness_delta);
    }
    out.sessions.push_back(shifts);
  }

  out.split.num_classes = config.num_classes;
  for (int c = 0; c < config.num_classes; ++c) {
    for (int session = 1; session <= 2; ++session) {
      for (int k = 0; k < config.images_per_class_per_session; ++k) {
        RenderRecord record;
        record.class_id = c;
        record.session_id = session;
        record.jitter.rotation = uniform(rng, -config.max_rotation_rad, config.max_rotation_rad);
        record.jitter.dx = uniform(rng, -config.max_shift_px, config.max_shift_px);
        record.jitter.dy = uniform(rng, -config.max_shift_px, config.max_shift_px);
        record.jitter.scale = 1.0 + uniform(rng, -config.max_scale_delta, config.max_scale_delta);
        record.jitter.brightness =
            uniform(rng, -config.max_brightness_delta, config.max_brightness_delta);
        Image image = render_vein_image(out.templates[static_cast<std::size_t>(c)], record.jitter,
                                        out.sessions[static_cast<std::size_t>(c)][session - 1],
                                        config.noise_level, noise_rng);
        image.class_id = c;
        image.session_id = session;
        if (session == 1) {
          out.split.train.push_back(std::move(image));
          out.train_log.push_back(record);
        } else {
          out.split.test.push_back(std::move(image));
          out.test_log.push_back(record);
        }
      }
    }
  }
  return out;
}

DatasetSplit generate_synthetic_dataset(const SyntheticVeinConfig& config) {
  return generate_synthetic_dataset_detailed(config).split;
}

std::string to_key_value_text(const SyntheticVeinConfig& config) {
  std::ostringstream os;
  os.precision(17);
  os << "num_classes = " << config.num_classes << '\n'
     << "images_per_class_per_session = " << config.images_per_class_per_session << '\n'
     << "vessel_count_min = " << config.vessel_count_min << '\n'
     << "vessel_count_max = " << config.vessel_count_max << '\n'
     << "vessel_width_min = " << config.vessel_width_min << '\n'
     << "vessel_width_max = " << config.vessel_width_max << '\n'
     << "noise_level = " << config.noise_level << '\n'
     << "seed = " << config.seed << '\n'
     << "max_rotation_rad = " << config.max_rotation_rad << '\n'
     << "max_shift_px = " << config.max_shift_px << '\n'
     << "max_scale_delta = " << config.max_scale_delta << '\n'
     << "max_brightness_delta = " << config.max_brightness_delta << '\n'
     << "session_brightness_delta = " << config.session_brightness_delta << '\n'
     << "session_contrast_delta = " << config.session_contrast_delta << '\n';
  return os.str();
}

SyntheticVeinConfig synthetic_config_from_text(const std::string& text) {
  SyntheticVeinConfig config;
  const std::map<std::string, std::function<void(const std::string&)>> setters = {
      {"num_classes", [&](const std::string& v) { config.num_classes = std::stoi(v); }},
      {"images_per_class_per_session",
       [&](const std::string& v) { config.images_per_class_per_session = std::stoi(v); }},
      {"vessel_count_min", [&](const std::string& v) { config.vessel_count_min = std::stoi(v); }},
      {"vessel_count_max", [&](const std::string& v) { config.vessel_count_max = std::stoi(v); }},
      {"vessel_width_min", [&](const std::string& v) { config.vessel_width_min = std::stod(v); }},
      {"vessel_width_max", [&](const std::string& v) { config.vessel_width_max = std::stod(v); }},
      {"noise_level", [&](const std::string& v) { config.noise_level = std::stod(v); }},
      {"seed", [&](const std::string& v) { config.seed = std::stoull(v); }},
      {"max_rotation_rad", [&](const std::string& v) { config.max_rotation_rad = std::stod(v); }},
      {"max_shift_px", [&](const std::string& v) { config.max_shift_px = std::stod(v); }},
      {"max_scale_delta", [&](const std::string& v) { config.max_scale_delta = std::stod(v); }},
      {"max_brightness_delta",
       [&](const std::string& v) { config.max_brightness_delta = std::stod(v); }},
      {"session_brightness_delta",
       [&](const std::string& v) { config.session_brightness_delta = std::stod(v); }},
      {"session_contrast_delta",
       [&](const std::string& v) { config.session_contrast_delta = std::stod(v); }},
  };
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed synthetic config line: " + line);
    const std::string key = trim(line.substr(0, eq));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown synthetic config key: " + key);
    try {
      it->second(trim(line.substr(eq + 1)));
    } catch (const std::logic_error&) {
      throw ConfigError("bad value for synthetic config key " + key);
    }
  }
  config.validate();
  return config;
}

Image load_image_file(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DatasetError("unreadable image file: " + path.string());
  cv::Mat gray;
  if (raw.channels() == 3) {
    cv::cvtColor(raw, gray, cv::COLOR_BGR2GRAY);
  } else if (raw.channels() == 4) {
    cv::cvtColor(raw, gray, cv::COLOR_BGRA2GRAY);
  } else if (raw.channels() == 1) {
    gray = raw;
  } else {
    throw DatasetError("unsupported channel count in " + path.string());
  }
  double scale = 1.0;
  switch (gray.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw DatasetError("unsupported pixel depth in " + path.string());
  }
  cv::Mat unit;
  gray.convertTo(unit, CV_32F, scale);
  cv::Mat resized;
  if (unit.rows != kImageSide || unit.cols != kImageSide) {
    cv::resize(unit, resized, cv::Size(kImageSide, kImageSide), 0, 0, cv::INTER_AREA);
  } else {
    resized = unit;
  }
  Image image;
  for (int r = 0; r < kImageSide; ++r) {
    for (int c = 0; c < kImageSide; ++c) {
      image.at(r, c) = std::clamp(resized.at<float>(r, c), 0.0f, 1.0f);
    }
  }
  return image;
}

DatasetSplit load_image_directory(const fs::path& root, const DirectoryLayout& layout) {
  if (!fs::is_directory(root)) throw DatasetError("dataset root is not a directory: " + root.string());

  std::map<int, fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    int id = 0;
    if (entry.is_directory() && parse_prefixed_int(entry.path().filename().string(), "class_", id)) {
      class_dirs[id] = entry.path();
    }
  }
  if (class_dirs.empty()) throw DatasetError("no classes found in " + root.string());

  DatasetSplit split;
  split.num_classes = static_cast<int>(class_dirs.size());
  int label = 0;
  for (const auto& [id, dir] : class_dirs) {
    std::map<int, std::vector<fs::path>> sessions;
    for (const auto& entry : fs::directory_iterator(dir)) {
      int s = 0;
      if (!entry.is_directory() || !parse_prefixed_int(entry.path().filename().string(), "session_", s)) {
        continue;
      }
      auto& files = sessions[s];
      for (const auto& f : fs::directory_iterator(entry.path())) {
        if (f.is_regular_file() && is_image_file(f.path())) files.push_back(f.path());
      }
      std::sort(files.begin(), files.end());
    }
    const auto train_it = sessions.find(layout.train_session);
    const auto test_it = sessions.find(layout.test_session);
    if (train_it == sessions.end() || train_it->second.empty()) {
      if (test_it != sessions.end() && !test_it->second.empty()) {
        throw DatasetError("class present only in the test session: " + dir.string());
      }
      throw DatasetError("missing session_" + std::to_string(layout.train_session) + " in " +
                         dir.string());
    }
    if (test_it == sessions.end() || test_it->second.empty()) {
      throw DatasetError("missing session_" + std::to_string(layout.test_session) + " in " +
                         dir.string());
    }
    for (const auto& [session, files] : sessions) {
      if (session != layout.train_session && session != layout.test_session) continue;
      for (const auto& file : files) {
        Image image = load_image_file(file);
        image.class_id = label;
        image.session_id = session;
        (session == layout.train_session ? split.train : split.test).push_back(std::move(image));
      }
    }
    ++label;
  }
  return split;
}

void save_image_directory(const DatasetSplit& split, const fs::path& root,
                          const DirectoryLayout& layout) {
  std::map<std::pair<int, int>, int> counters;
  auto write = [&](const Image& image, int session) {
    char class_name[32];
    std::snprintf(class_name, sizeof(class_name), "class_%03d", image.class_id);
    const fs::path dir = root / class_name / ("session_" + std::to_string(session));
    fs::create_directories(dir);
    int& n = counters[{image.class_id, session}];
    char file_name[32];
    std::snprintf(file_name, sizeof(file_name), "img_%03d.png", n++);
    cv::Mat mat(kImageSide, kImageSide, CV_8U);
    for (int r = 0; r < kImageSide; ++r) {
      for (int c = 0; c < kImageSide; ++c) {
        mat.at<std::uint8_t>(r, c) =
            static_cast<std::uint8_t>(std::lround(std::clamp(image.at(r, c), 0.0f, 1.0f) * 255.0f));
      }
    }
    if (!cv::imwrite((dir / file_name).string(), mat)) {
      throw IoError("cannot write " + (dir / file_name).string());
    }
  };
  for (const Image& image : split.train) write(image, layout.train_session);
  for (const Image& image : split.test) write(image, layout.test_session);
}

}  // namespace amcl
