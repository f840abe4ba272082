// amcl: experiment runner for adversarial masking contrastive learning.
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "amcl/config.hpp"
#include "amcl/errors.hpp"
#include "amcl/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Adversarial masking contrastive learning pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  int train_session = 0;
  int test_session = 0;
  bool print_config = false;

  app.add_option("-c,--config", config_path, "INI experiment config")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override, section.key=value (repeatable)");
  app.add_option("-o,--output-dir", output_dir, "Output directory (AMCL_OUTPUT_DIR wins over the config file)");
  app.add_option("--train-session", train_session, "Session id used for training");
  app.add_option("--test-session", test_session, "Session id used for testing");
  app.add_flag("--print-config", print_config, "Print the canonical config and its hash, then exit");

  std::vector<amcl::Stage> stages;
  for (amcl::Stage s : amcl::all_stages()) {
    app.add_subcommand(amcl::stage_name(s), std::string("Run the ") + amcl::stage_name(s) + " stage")
        ->callback([&stages, s] { stages.push_back(s); });
  }
  app.add_subcommand("all", "Run every stage in order")->callback([&stages] {
    stages.assign(amcl::all_stages().begin(), amcl::all_stages().end());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : amcl::kExitConfigError;
  }

  amcl::ExperimentConfig config;
  try {
    if (!output_dir.empty()) overrides.push_back("run.output_dir=" + output_dir);
    if (train_session != 0) overrides.push_back("data.train_session=" + std::to_string(train_session));
    if (test_session != 0) overrides.push_back("data.test_session=" + std::to_string(test_session));
    config = amcl::load_experiment_config(config_path, overrides);
  } catch (const amcl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return amcl::kExitConfigError;
  }

  if (print_config) {
    std::cout << config.canonical_text() << "config_hash = " << config.config_hash() << '\n';
    return amcl::kExitOk;
  }
  std::cerr << "output_dir: " << config.output_dir.string() << "\nconfig_hash: " << config.config_hash() << '\n';
  return amcl::run_pipeline(config, stages, std::cerr);
}
