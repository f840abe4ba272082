#include "amcl/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "amcl/adversarial.hpp"
#include "amcl/checkpoint.hpp"
#include "amcl/errors.hpp"
#include "amcl/hashing.hpp"
#include "amcl/plots.hpp"
#include "amcl/seeds.hpp"

namespace amcl {

namespace fs = std::filesystem;

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::SynthData, Stage::GenMasks, Stage::TrainGan, Stage::Pretrain,
                                         Stage::Finetune,  Stage::Eval,     Stage::Compare,  Stage::Report};
  return stages;
}

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::SynthData: return "synth-data";
    case Stage::GenMasks: return "gen-masks";
    case Stage::TrainGan: return "train-gan";
    case Stage::Pretrain: return "pretrain";
    case Stage::Finetune: return "finetune";
    case Stage::Eval: return "eval";
    case Stage::Compare: return "compare";
    case Stage::Report: return "report";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : all_stages()) {
    if (name == stage_name(s)) return s;
  }
  throw ConfigError("unknown stage '" + name + "'");
}

Manifest::Manifest(fs::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.stage = j.value("stage", "");
      r.artifact = j["artifact"].is_null() ? "" : j["artifact"].get<std::string>();
      r.hash = j["hash"].is_null() ? "" : j["hash"].get<std::string>();
      r.wall_time_s = j.value("wall_time_s", 0.0);
      r.status = j.value("status", "ok");
      r.error = j.value("error", "");
      records_.push_back(r);
    } catch (const nlohmann::json::exception&) {
      // A torn line from an interrupted run is dropped.
    }
  }
}

void Manifest::record(const ManifestRecord& record) {
  if (!record.artifact.empty()) {
    std::erase_if(records_, [&](const ManifestRecord& r) { return r.artifact == record.artifact; });
  }
  records_.push_back(record);
}

void Manifest::clear_failures(const std::string& stage) {
  std::erase_if(records_, [&](const ManifestRecord& r) { return r.stage == stage && r.status != "ok"; });
}

void Manifest::save() const {
  fs::create_directories(path_.parent_path());
  const fs::path tmp = path_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& r : records_) {
      nlohmann::ordered_json j;
      j["stage"] = r.stage;
      j["artifact"] = r.artifact.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.artifact);
      j["hash"] = r.hash.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.hash);
      j["wall_time_s"] = r.wall_time_s;
      if (r.status != "ok") {
        j["status"] = r.status;
        j["error"] = r.error;
      }
      out << j.dump() << '\n';
    }
  }
  fs::rename(tmp, path_);
}

std::vector<std::string> stage_inputs(Stage stage, const ExperimentConfig& config) {
  switch (stage) {
    case Stage::SynthData:
    case Stage::GenMasks:
    case Stage::Report:
      return {};
    case Stage::TrainGan:
      return {"masks/corpus.txt", "data"};
    case Stage::Pretrain:
      if (config.pretrain_mode == "amcl") return {"data", "gan/generator.ckpt"};
      return {"data"};
    case Stage::Finetune:
      if (config.finetune_source == "pretrain") return {"data", "pretrain/encoder.ckpt"};
      return {"data"};
    case Stage::Eval:
      return {"data", "finetune/classifier.ckpt"};
    case Stage::Compare:
      for (auto m : config.compare_modes) {
        if (m == PretrainMode::Amcl) return {"data", "gan/generator.ckpt"};
      }
      return {"data"};
  }
  return {};
}

std::vector<std::string> stage_outputs(Stage stage, const ExperimentConfig&) {
  switch (stage) {
    case Stage::SynthData: return {"data"};
    case Stage::GenMasks: return {"masks/corpus.txt"};
    case Stage::TrainGan: return {"gan/generator.ckpt", "gan/discriminator.ckpt", "gan/loss.csv"};
    case Stage::Pretrain: return {"pretrain/encoder.ckpt", "pretrain/loss_history.csv"};
    case Stage::Finetune: return {"finetune/classifier.ckpt", "finetune/loss.csv"};
    case Stage::Eval: return {"eval/report.json"};
    case Stage::Compare: return {"compare/comparison.csv"};
    case Stage::Report: return {"report/summary.md"};
  }
  return {};
}

void save_classifier(const fs::path& path, ClassifierImpl& classifier, const std::string& config_hash) {
  Checkpoint ckpt;
  const auto& o = classifier.encoder().options();
  ckpt.metadata["architecture_id"] = o.architecture_id;
  ckpt.metadata["embed_dim"] = std::to_string(o.embed_dim);
  ckpt.metadata["base_width"] = std::to_string(o.base_width);
  ckpt.metadata["projection_head"] = o.projection_head ? "1" : "0";
  ckpt.metadata["projection_dim"] = std::to_string(o.projection_dim);
  ckpt.metadata["num_classes"] = std::to_string(classifier.num_classes());
  ckpt.metadata["config_hash"] = config_hash;
  ckpt.add_module("classifier.", classifier);
  save_checkpoint(path, ckpt);
}

Classifier load_classifier(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  EncoderOptions o;
  try {
    o.architecture_id = ckpt.meta("architecture_id");
    o.embed_dim = std::stoll(ckpt.meta("embed_dim"));
    o.base_width = std::stoll(ckpt.meta("base_width"));
    o.projection_head = ckpt.meta("projection_head") == "1";
    o.projection_dim = std::stoll(ckpt.meta("projection_dim"));
  } catch (const std::logic_error& e) {
    throw CheckpointError("malformed classifier metadata in " + path.string() + ": " + e.what());
  }
  Classifier classifier(make_encoder(o), std::stoll(ckpt.meta("num_classes")));
  ckpt.restore_module("classifier.", *classifier);
  classifier->eval();
  return classifier;
}

namespace {

using Clock = std::chrono::steady_clock;

class StageContext {
 public:
  StageContext(Stage stage, const ExperimentConfig& config, Manifest& manifest, std::ostream& log)
      : stage_(stage), config_(config), manifest_(manifest), log_(log), start_(Clock::now()) {}

  fs::path path(const std::string& rel) const { return config_.output_dir / rel; }

  fs::path prepare(const std::string& rel) const {
    const fs::path p = path(rel);
    fs::create_directories(p.parent_path());
    return p;
  }

  void produced(const std::string& rel) { outputs_.push_back(rel); }

  void produced_tree(const std::string& rel) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(path(rel))) {
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), config_.output_dir).generic_string());
    }
    std::sort(files.begin(), files.end());
    outputs_.insert(outputs_.end(), files.begin(), files.end());
  }

  void commit() {
    const double wall = std::chrono::duration<double>(Clock::now() - start_).count();
    manifest_.clear_failures(stage_name(stage_));
    for (const auto& rel : outputs_) {
      manifest_.record({stage_name(stage_), rel, sha256_file(path(rel)), wall, "ok", ""});
    }
    manifest_.save();
  }

  std::ostream& log() { return log_; }
  const ExperimentConfig& config() const { return config_; }

 private:
  Stage stage_;
  const ExperimentConfig& config_;
  Manifest& manifest_;
  std::ostream& log_;
  Clock::time_point start_;
  std::vector<std::string> outputs_;
};

DatasetSplit load_data(const StageContext& ctx) {
  const fs::path data = ctx.path("data");
  if (!fs::exists(data)) throw MissingArtifactError("missing dataset directory " + data.string());
  auto split = load_image_directory(data, ctx.config().layout);
  split.validate(ctx.config().layout.train_session, ctx.config().layout.test_session);
  return split;
}

void require(const StageContext& ctx, const std::string& rel) {
  if (!fs::exists(ctx.path(rel))) throw MissingArtifactError("missing artifact " + ctx.path(rel).string());
}

MaskGenerator load_trained_generator(const StageContext& ctx) {
  require(ctx, "gan/generator.ckpt");
  const auto expected = ctx.config().generator_options();
  return load_generator(ctx.path("gan/generator.ckpt"), &expected);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void stage_synth_data(StageContext& ctx) {
  const auto& cfg = ctx.config();
  DatasetSplit split;
  if (cfg.data_source == "synthetic") {
    split = generate_synthetic_dataset(cfg.synthetic);
  } else {
    split = load_image_directory(cfg.data_root, cfg.layout);
  }
  const fs::path data = ctx.path("data");
  fs::remove_all(data);
  save_image_directory(split, data, cfg.layout);
  if (cfg.data_source == "synthetic") write_text(data / "synthetic_config.txt", to_key_value_text(cfg.synthetic));
  ctx.produced_tree("data");
  ctx.log() << "synth-data: " << split.train.size() << " train, " << split.test.size() << " test, "
            << split.num_classes << " classes\n";
}

void stage_gen_masks(StageContext& ctx) {
  const auto count = write_mask_corpus(ctx.prepare("masks/corpus.txt"), ctx.config().mask_sampler());
  ctx.produced("masks/corpus.txt");
  ctx.log() << "gen-masks: " << count << " masks\n";
}

void stage_train_gan(StageContext& ctx) {
  const auto& cfg = ctx.config();
  require(ctx, "masks/corpus.txt");
  const auto corpus = load_mask_corpus(ctx.path("masks/corpus.txt"));
  const auto split = load_data(ctx);
  auto result = train_gan(corpus, cfg.gan_train(), cfg.generator_options(), cfg.discriminator_options(),
                          [&](const GanEpochLoss& e) {
                            ctx.log() << "train-gan: epoch " << e.epoch << " d_loss " << e.d_loss << " g_loss "
                                      << e.g_loss << '\n';
                          });
  save_generator(ctx.prepare("gan/generator.ckpt"), *result.generator);
  save_discriminator(ctx.path("gan/discriminator.ckpt"), *result.discriminator);
  write_gan_trace_csv(ctx.path("gan/loss.csv"), result.trace);

  auto gen = make_torch_generator(derive_seed(cfg.seed, "gallery"));
  const auto zs = torch::randn({static_cast<int64_t>(cfg.gallery_masks), result.generator->options().latent_dim}, gen);
  auto masks = sample_masks(*result.generator, zs, cfg.snap_to_grid ? cfg.masks.patch_size : 0);
  while (masks.size() < 32) masks.push_back(masks[masks.size() % cfg.gallery_masks]);
  save_mask_corpus(ctx.path("gan/gallery_masks.txt"), masks);
  emit_plots(cfg.output_dir);
  for (const char* rel : {"gan/generator.ckpt", "gan/discriminator.ckpt", "gan/loss.csv", "gan/gallery_masks.txt",
                          "plots/gan_loss.png", "plots/mask_gallery.png"}) {
    ctx.produced(rel);
  }
}

void stage_pretrain(StageContext& ctx) {
  const auto& cfg = ctx.config();
  const auto split = load_data(ctx);
  const auto pcfg = cfg.pretrain_config();
  auto progress = [&](const LossRecord& r) {
    if (r.step == 1 && (r.epoch == 1 || r.epoch % 10 == 0)) {
      ctx.log() << "pretrain: epoch " << r.epoch << ' ' << phase_name(r.phase) << " loss " << r.loss << '\n';
    }
  };
  EncoderPtr encoder;
  std::vector<LossRecord> history;
  fs::create_directories(ctx.path("pretrain"));
  if (cfg.pretrain_mode == "amcl") {
    auto state = run_amcl(split, load_trained_generator(ctx), pcfg, progress);
    save_amcl_checkpoint(ctx.path("pretrain/amcl.ckpt"), state, cfg.config_hash());
    ctx.produced("pretrain/amcl.ckpt");
    encoder = state.encoder;
    history = state.history;
  } else {
    encoder = run_simclr(split, pcfg, &history, progress);
  }
  save_encoder(ctx.path("pretrain/encoder.ckpt"), *encoder);
  write_loss_history_csv(ctx.path("pretrain/loss_history.csv"), history);
  emit_plots(cfg.output_dir);
  for (const char* rel : {"pretrain/encoder.ckpt", "pretrain/loss_history.csv", "plots/pretrain_loss.png"}) {
    ctx.produced(rel);
  }
}

void stage_finetune(StageContext& ctx) {
  const auto& cfg = ctx.config();
  const auto split = load_data(ctx);
  EncoderPtr encoder;
  if (cfg.finetune_source == "pretrain") {
    require(ctx, "pretrain/encoder.ckpt");
    encoder = load_encoder(ctx.path("pretrain/encoder.ckpt"), cfg.pretrain.encoder.architecture_id);
  } else {
    encoder = initial_encoder(cfg.pretrain_config());
  }
  const auto tune = cfg.finetune_config();
  auto classifier = make_classifier(encoder, split.num_classes, tune.seed);
  const auto trace = finetune(*classifier, split, tune);
  save_classifier(ctx.prepare("finetune/classifier.ckpt"), *classifier, cfg.config_hash());
  std::ostringstream csv;
  csv.precision(10);
  csv << "epoch,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) csv << i + 1 << ',' << trace[i] << '\n';
  write_text(ctx.path("finetune/loss.csv"), csv.str());
  if (!trace.empty()) ctx.log() << "finetune: final loss " << trace.back() << '\n';
  emit_plots(cfg.output_dir);
  for (const char* rel : {"finetune/classifier.ckpt", "finetune/loss.csv", "plots/finetune_loss.png"}) {
    ctx.produced(rel);
  }
}

void stage_eval(StageContext& ctx) {
  const auto& cfg = ctx.config();
  const auto split = load_data(ctx);
  require(ctx, "finetune/classifier.ckpt");
  auto classifier = load_classifier(ctx.path("finetune/classifier.ckpt"));
  const auto report = evaluate(*classifier, split, cfg.score_source);
  write_report_json(ctx.prepare("eval/report.json"), report, cfg.config_hash());
  write_text(ctx.path("eval/mode.txt"), (cfg.finetune_source == "scratch" ? std::string("scratch") : cfg.pretrain_mode) + "\n");
  ctx.log() << "eval: accuracy " << report.accuracy << " eer " << report.eer << '\n';
  emit_plots(cfg.output_dir);
  for (const char* rel : {"eval/report.json", "eval/mode.txt", "plots/roc.png"}) ctx.produced(rel);
}

void stage_compare(StageContext& ctx) {
  const auto& cfg = ctx.config();
  const auto split = load_data(ctx);
  const auto ccfg = cfg.compare_config();
  MaskGenerator generator{nullptr};
  for (auto m : ccfg.modes) {
    if (m == PretrainMode::Amcl) generator = load_trained_generator(ctx);
  }
  const auto rows = compare_pretraining(split, generator, ccfg, [&](PretrainMode m, std::uint64_t seed, const std::string& ev) {
    ctx.log() << "compare: " << mode_name(m) << " seed " << seed << ' ' << ev << '\n';
  });
  write_comparison_csv(ctx.prepare("compare/comparison.csv"), rows);
  write_comparison_runs_csv(ctx.path("compare/runs.csv"), rows);
  ctx.produced("compare/comparison.csv");
  ctx.produced("compare/runs.csv");
  for (const auto& row : rows) {
    const std::string rel = std::string("compare/report_") + mode_name(row.mode) + ".json";
    write_report_json(ctx.path(rel), row.report, cfg.config_hash());
    ctx.produced(rel);
    ctx.log() << "compare: " << mode_name(row.mode) << " ACC " << row.accuracy << " EER " << row.eer << '\n';
  }
  emit_plots(cfg.output_dir);
  ctx.produced("plots/roc.png");
}

void stage_report(StageContext& ctx) {
  const auto& cfg = ctx.config();
  const auto plots = emit_plots(cfg.output_dir);
  std::ostringstream md;
  md << "# Run summary\n\nconfig_hash: " << cfg.config_hash() << "\n\n";
  if (fs::exists(ctx.path("eval/report.json"))) {
    const auto r = read_report_json(ctx.path("eval/report.json"));
    md << "## Evaluation\n\naccuracy: " << r.accuracy << "\neer: " << r.eer << "\n\n";
  }
  if (fs::exists(ctx.path("compare/comparison.csv"))) {
    std::ifstream in(ctx.path("compare/comparison.csv"));
    md << "## Comparison\n\n```\n" << in.rdbuf() << "```\n";
  }
  write_text(ctx.prepare("report/summary.md"), md.str());
  ctx.produced("report/summary.md");
  for (const auto& p : plots.written) ctx.produced(fs::relative(p, cfg.output_dir).generic_string());
  if (!plots.missing.empty()) {
    ctx.commit();
    std::string list;
    for (const auto& m : plots.missing) list += "\n  " + m;
    throw MissingArtifactError("report: plot inputs absent:" + list);
  }
}

}  // namespace

void run_stage(Stage stage, const ExperimentConfig& config, Manifest& manifest, std::ostream& log) {
  StageContext ctx(stage, config, manifest, log);
  switch (stage) {
    case Stage::SynthData: stage_synth_data(ctx); break;
    case Stage::GenMasks: stage_gen_masks(ctx); break;
    case Stage::TrainGan: stage_train_gan(ctx); break;
    case Stage::Pretrain: stage_pretrain(ctx); break;
    case Stage::Finetune: stage_finetune(ctx); break;
    case Stage::Eval: stage_eval(ctx); break;
    case Stage::Compare: stage_compare(ctx); break;
    case Stage::Report: stage_report(ctx); break;
  }
  ctx.commit();
}

int run_pipeline(const ExperimentConfig& config, std::span<const Stage> stages, std::ostream& log) {
  try {
    config.validate();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }

  std::set<std::string> available;
  for (Stage s : stages) {
    for (const auto& in : stage_inputs(s, config)) {
      if (!available.contains(in) && !fs::exists(config.output_dir / in)) {
        log << "missing artifact: " << stage_name(s) << " needs " << (config.output_dir / in).string()
            << ", which no earlier scheduled stage produces\n";
        return kExitMissingArtifact;
      }
    }
    for (const auto& out : stage_outputs(s, config)) available.insert(out);
  }

  fs::create_directories(config.output_dir);
  Manifest manifest(config.output_dir / "manifest.jsonl");
  for (Stage s : stages) {
    log << "== " << stage_name(s) << '\n';
    const auto start = Clock::now();
    auto fail = [&](const std::exception& e, const char* kind) {
      log << stage_name(s) << " failed (" << kind << "): " << e.what() << '\n';
      const double wall = std::chrono::duration<double>(Clock::now() - start).count();
      manifest.record({stage_name(s), "", "", wall, "failed", e.what()});
      manifest.save();
    };
    try {
      run_stage(s, config, manifest, log);
    } catch (const MissingArtifactError& e) {
      fail(e, "missing artifact");
      return kExitMissingArtifact;
    } catch (const ConfigError& e) {
      fail(e, "config");
      return kExitConfigError;
    } catch (const std::exception& e) {
      fail(e, "error");
      return kExitStageFailure;
    }
  }
  return kExitOk;
}

}  // namespace amcl
