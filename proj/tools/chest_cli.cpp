// chest: configuration-driven pipeline runner.
//
// Subcommands: ingest, embed, build-subgraphs, pretrain, finetune, evaluate,
// ablate, all. Exit codes: 0 success, 2 config error, 3 dependency error,
// 4 numeric fault, 1 anything else.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chest/stages.hpp"

namespace {

// "--stage-override key=value"; the value is parsed as JSON when possible so
// numbers, booleans and arrays work, otherwise it is taken as a string.
void apply_override(nlohmann::json& doc, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw chest::config_error("--stage-override expects key=value, got \"" +
                              kv + "\"");
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  try {
    doc[key] = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    doc[key] = raw;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CHEST: curriculum-pretrained heterogeneous subgraph "
               "transformer pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = "out";
  std::int64_t seed = -1;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "run configuration (flat JSON)")
      ->required();
  app.add_option("--out", out_dir, "output directory (one pipeline per dir)");
  app.add_option("--seed", seed, "override the root seed");
  app.add_option("--stage-override", overrides,
                 "override a config key, e.g. train.epochs_finetune=3");

  for (const char* name :
       {"ingest", "embed", "build-subgraphs", "pretrain", "finetune",
        "evaluate", "ablate", "all"})
    app.add_subcommand(name, std::string("run the ") + name + " stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    std::ifstream in(config_path);
    if (!in)
      throw chest::config_error("cannot open config file: " + config_path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw chest::config_error(std::string("config parse failure: ") +
                                e.what());
    }
    for (const auto& kv : overrides) apply_override(doc, kv);
    if (seed >= 0) doc["seed"] = static_cast<std::uint64_t>(seed);

    auto cfg = chest::pipeline::RunConfig::from_json(doc);
    chest::pipeline::PipelineLock lock(out_dir);
    chest::pipeline::RunManifest manifest(out_dir);
    chest::pipeline::StageRunner runner(manifest, cfg);
    runner.run(stage);

    // keep a copy of the effective config beside the artifacts
    std::ofstream eff(manifest.artifact("effective_config.json"),
                      std::ios::trunc);
    eff << runner.config().to_json().dump(2) << "\n";
    return 0;
  } catch (const chest::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const chest::dependency_error& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return 3;
  } catch (const chest::numeric_fault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
