#include "amcl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "amcl/errors.hpp"
#include "amcl/hashing.hpp"
#include "amcl/seeds.hpp"

namespace amcl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const std::string t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  std::string t = trim(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

using FieldTable = std::map<std::string, Field>;

template <typename T>
Field number_field(const std::string& key, T& ref) {
  if constexpr (std::is_floating_point_v<T>) {
    return {[&ref] { return fmt_double(ref); }, [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }};
  } else {
    return {[&ref] { return std::to_string(ref); },
            [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }};
  }
}

Field bool_field(const std::string& key, bool& ref) {
  return {[&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, key](const std::string& v) { ref = parse_bool(key, v); }};
}

Field string_field(std::string& ref) {
  return {[&ref] { return ref; }, [&ref](const std::string& v) { ref = trim(v); }};
}

Field path_field(std::filesystem::path& ref) {
  return {[&ref] { return ref.string(); }, [&ref](const std::string& v) { ref = trim(v); }};
}

FieldTable bind(ExperimentConfig& c) {
  FieldTable t;
  auto num = [&t](const std::string& key, auto& ref) { t.emplace(key, number_field(key, ref)); };
  auto flag = [&t](const std::string& key, bool& ref) { t.emplace(key, bool_field(key, ref)); };

  num("run.seed", c.seed);
  t.emplace("run.output_dir", path_field(c.output_dir));

  t.emplace("data.source", string_field(c.data_source));
  t.emplace("data.root", path_field(c.data_root));
  num("data.seed", c.synthetic.seed);
  num("data.num_classes", c.synthetic.num_classes);
  num("data.images_per_class_per_session", c.synthetic.images_per_class_per_session);
  num("data.vessel_count_min", c.synthetic.vessel_count_min);
  num("data.vessel_count_max", c.synthetic.vessel_count_max);
  num("data.vessel_width_min", c.synthetic.vessel_width_min);
  num("data.vessel_width_max", c.synthetic.vessel_width_max);
  num("data.noise_level", c.synthetic.noise_level);
  num("data.max_rotation_rad", c.synthetic.max_rotation_rad);
  num("data.max_shift_px", c.synthetic.max_shift_px);
  num("data.max_scale_delta", c.synthetic.max_scale_delta);
  num("data.max_brightness_delta", c.synthetic.max_brightness_delta);
  num("data.session_brightness_delta", c.synthetic.session_brightness_delta);
  num("data.session_contrast_delta", c.synthetic.session_contrast_delta);
  num("data.train_session", c.layout.train_session);
  num("data.test_session", c.layout.test_session);

  num("masks.patch_size", c.masks.patch_size);
  num("masks.ratio_min", c.masks.ratio_min);
  num("masks.ratio_max", c.masks.ratio_max);
  num("masks.corpus_size", c.masks.corpus_size);
  num("masks.gallery_masks", c.gallery_masks);

  num("gan.epochs", c.gan.epochs);
  num("gan.batch_size", c.gan.batch_size);
  num("gan.learning_rate", c.gan.learning_rate);
  num("gan.beta1", c.gan.beta1);
  num("gan.beta2", c.gan.beta2);
  num("gan.width_divisor", c.gan_width_divisor);
  num("gan.generator_slope", c.generator_slope);
  num("gan.discriminator_slope", c.discriminator_slope);
  flag("gan.snap_to_grid", c.snap_to_grid);

  ContrastiveConfig& p = c.pretrain;
  t.emplace("pretrain.mode", string_field(c.pretrain_mode));
  num("pretrain.batch_size", p.batch_size);
  num("pretrain.temperature", p.temperature);
  flag("pretrain.include_positive_in_denominator", p.include_positive_in_denominator);
  num("pretrain.lambda", p.lambda_reg);
  num("pretrain.alpha", p.alpha);
  num("pretrain.beta", p.beta);
  num("pretrain.epochs", p.epochs);
  num("pretrain.t1", p.t1);
  num("pretrain.t2", p.t2);
  num("pretrain.latent_set_size", p.latent_set_size);
  flag("pretrain.fixed_pool", p.fixed_pool);
  num("pretrain.latent_norm_cap", p.latent_norm_cap);
  t.emplace("pretrain.encoder", string_field(p.encoder.architecture_id));
  num("pretrain.embed_dim", p.encoder.embed_dim);
  num("pretrain.base_width", p.encoder.base_width);
  flag("pretrain.projection_head", p.encoder.projection_head);
  num("pretrain.projection_dim", p.encoder.projection_dim);
  num("pretrain.crop_scale_min", p.augmentation.crop_scale_min);
  num("pretrain.crop_scale_max", p.augmentation.crop_scale_max);
  num("pretrain.flip_prob", p.augmentation.flip_prob);
  num("pretrain.jitter_strength", p.augmentation.jitter_strength);
  num("pretrain.blur_prob", p.augmentation.blur_prob);
  num("pretrain.grayscale_prob", p.augmentation.grayscale_prob);

  t.emplace("finetune.source", string_field(c.finetune_source));
  num("finetune.epochs", c.finetune.epochs);
  num("finetune.learning_rate", c.finetune.learning_rate);
  num("finetune.batch_size", c.finetune.batch_size);
  flag("finetune.augment", c.finetune_augment);

  t.emplace("eval.score_source",
            Field{[&c] {
                    return std::string(c.score_source == ScoreSource::EmbeddingCosine ? "embedding" : "posterior");
                  },
                  [&c](const std::string& v) {
                    const auto s = trim(v);
                    if (s == "embedding") {
                      c.score_source = ScoreSource::EmbeddingCosine;
                    } else if (s == "posterior") {
                      c.score_source = ScoreSource::Posterior;
                    } else {
                      throw ConfigError("eval.score_source must be embedding or posterior");
                    }
                  }});

  t.emplace("compare.modes", Field{[&c] {
                                     std::string out;
                                     for (auto m : c.compare_modes) out += (out.empty() ? "" : ",") + std::string(mode_name(m));
                                     return out;
                                   },
                                   [&c](const std::string& v) {
                                     c.compare_modes.clear();
                                     for (const auto& m : split_list(v)) c.compare_modes.push_back(parse_mode(m));
                                   }});
  t.emplace("compare.seeds", Field{[&c] {
                                     std::string out;
                                     for (auto s : c.compare_seeds) out += (out.empty() ? "" : ",") + std::to_string(s);
                                     return out;
                                   },
                                   [&c](const std::string& v) {
                                     c.compare_seeds.clear();
                                     for (const auto& s : split_list(v)) {
                                       c.compare_seeds.push_back(parse_number<std::uint64_t>("compare.seeds", s));
                                     }
                                   }});
  return t;
}

void assign(FieldTable& table, const std::string& key, const std::string& value) {
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(value);
}

template <typename Fn>
void as_config_error(Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data_source != "synthetic" && data_source != "directory") {
    throw ConfigError("data.source must be synthetic or directory");
  }
  if (data_source == "directory" && data_root.empty()) throw ConfigError("data.root is required for directory data");
  if (layout.train_session == layout.test_session) throw ConfigError("train and test sessions must differ");
  if (pretrain_mode != "amcl" && pretrain_mode != "simclr") throw ConfigError("pretrain.mode must be amcl or simclr");
  if (finetune_source != "pretrain" && finetune_source != "scratch") {
    throw ConfigError("finetune.source must be pretrain or scratch");
  }
  if (compare_modes.empty() || compare_seeds.empty()) throw ConfigError("compare needs modes and seeds");
  if (gallery_masks < 1 || gallery_masks > 32) throw ConfigError("masks.gallery_masks must be in [1, 32]");
  as_config_error([&] {
    if (data_source == "synthetic") synthetic.validate();
    mask_sampler().validate();
    gan_train().validate();
    generator_options();
    discriminator_options();
    pretrain_config().validate();
    finetune_config().validate();
    make_encoder(pretrain.encoder);
  });
}

std::string ExperimentConfig::canonical_text() const {
  auto copy = *this;
  const auto table = bind(copy);
  std::string out;
  for (const auto& [key, field] : table) {
    if (key == "run.output_dir") continue;
    out += key + " = " + field.get() + "\n";
  }
  return out;
}

std::string ExperimentConfig::config_hash() const { return sha256_hex(canonical_text()); }

GeneratorOptions ExperimentConfig::generator_options() const {
  GeneratorOptions o;
  o.layers = generator_table_layers(gan_width_divisor);
  o.activation_slope = generator_slope;
  return o;
}

DiscriminatorOptions ExperimentConfig::discriminator_options() const {
  DiscriminatorOptions o;
  o.layers = discriminator_table_layers(std::min<int64_t>(gan_width_divisor, 32));
  o.activation_slope = discriminator_slope;
  return o;
}

MaskSamplerConfig ExperimentConfig::mask_sampler() const {
  auto m = masks;
  m.seed = derive_seed(seed, "masks");
  return m;
}

GanTrainConfig ExperimentConfig::gan_train() const {
  auto g = gan;
  g.seed = derive_seed(seed, "gan");
  return g;
}

ContrastiveConfig ExperimentConfig::pretrain_config() const {
  auto p = pretrain;
  p.seed = derive_seed(seed, "pretrain");
  return p;
}

FinetuneConfig ExperimentConfig::finetune_config() const {
  auto f = finetune;
  f.seed = derive_seed(seed, "finetune");
  if (finetune_augment) f.augmentation = pretrain.augmentation;
  return f;
}

CompareConfig ExperimentConfig::compare_config() const {
  CompareConfig c;
  c.modes = compare_modes;
  c.seeds = compare_seeds;
  c.pretrain = pretrain;
  c.finetune = finetune_config();
  c.score_source = score_source;
  return c;
}

std::vector<std::string> config_keys() {
  ExperimentConfig c;
  std::vector<std::string> keys;
  for (const auto& [key, field] : bind(c)) keys.push_back(key);
  return keys;
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::vector<std::string>& overrides) {
  ExperimentConfig config;
  auto table = bind(config);

  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) assign(table, section + "." + key, value.data());
  }
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + item + "' is not section.key=value");
    assign(table, trim(item.substr(0, eq)), item.substr(eq + 1));
  }
  config.validate();
  return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  auto config = parse_experiment_config(text, overrides);
  if (const char* env = std::getenv("AMCL_OUTPUT_DIR"); env != nullptr && *env != '\0') config.output_dir = env;
  return config;
}

}  // namespace amcl
