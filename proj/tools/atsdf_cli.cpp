#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "atsdf/pipeline.hpp"

namespace {

struct Command {
  const char* name;
  const char* help;
  std::vector<atsdf::Stage> stages;
};

const std::vector<Command>& commands() {
  using atsdf::Stage;
  static const std::vector<Command> table{
      {"simulate", "Simulate LiDAR scans, camera and label frames of the synthetic scene", {Stage::kSimulate}},
      {"reconstruct", "Fuse scans into the volume and extract the mesh", {Stage::kReconstruct, Stage::kMesh}},
      {"texture", "Compute visibility and bake the textured mesh", {Stage::kVisibility, Stage::kTexture}},
      {"semantic", "Compute visibility and fuse per-face classes", {Stage::kVisibility, Stage::kSemantic}},
      {"evaluate", "Compare the mesh against the ground-truth scene", {Stage::kEvaluate}},
      {"all", "Run every enabled stage in order",
       {Stage::kSimulate, Stage::kReconstruct, Stage::kMesh, Stage::kVisibility, Stage::kTexture, Stage::kSemantic,
        Stage::kEvaluate}},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR mesh reconstruction, texturing and semantic labeling"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> output_dir;
  app.add_option("--config", config_path, "Config file (.toml or .json)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");
  app.add_option("--output-dir", output_dir, "Output directory");

  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const Command& c : commands()) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->fallthrough();
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  atsdf::PipelineConfig config;
  try {
    if (!config_path.empty()) config = atsdf::PipelineConfig::load(config_path);
    config.apply_env(atsdf::system_env());
  } catch (const atsdf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (seed) config.seed = *seed;
  if (threads) config.threads = *threads;
  if (output_dir) config.output_dir = *output_dir;

  const Command* command = nullptr;
  for (const auto& [sub, c] : subs) {
    if (sub->parsed()) command = c;
  }
  const auto stages = atsdf::enabled_stages(config, command->stages);
  return atsdf::run(config, stages, std::cerr);
}
