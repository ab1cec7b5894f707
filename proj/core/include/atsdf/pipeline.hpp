#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atsdf/texturing.hpp"

namespace atsdf {

enum class Stage { kSimulate, kReconstruct, kMesh, kVisibility, kTexture, kSemantic, kEvaluate };

std::string_view stage_name(Stage stage) noexcept;
std::optional<Stage> stage_from_name(std::string_view name) noexcept;

/// Looks up an environment variable; nullopt when unset.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup system_env();

inline constexpr const char* kEnvPrefix = "ATSDF_";

/// Every knob of a run. Keys in config files are "<section>.<field>" as
/// listed by PipelineConfig::keys(); the environment variable for a key is
/// ATSDF_ + the key upper-cased with '.' replaced by '_', e.g.
/// ATSDF_VOLUME_VOXEL_SIZE.
struct PipelineConfig {
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::filesystem::path output_dir = "atsdf_out";

  struct Stages {
    bool simulate = true;
    bool reconstruct = true;
    bool mesh = true;
    bool visibility = true;
    bool texture = true;
    bool semantic = true;
    bool evaluate = true;
  } stages;

  /// Inputs. Empty entries default to the simulate stage's outputs under
  /// <output_dir>/sim.
  struct Paths {
    std::filesystem::path scans;       // directory of world-frame *.ply point clouds
    std::filesystem::path trajectory;  // one sensor pose per scan, in file-name order
    std::filesystem::path frames;      // color frame manifest
    std::filesystem::path labels;      // label frame manifest
    std::filesystem::path palette;
    std::filesystem::path scene;       // ground truth for evaluate
  } paths;

  struct Volume {
    double voxel_size = 0.025;
    double eps_min = 0.10;
    double eps_max = 0.30;
    double k = 64.0;
    double min_weight = 0.05;
    double iso_weight_min = 1.0;
    std::uint64_t max_blocks = std::uint64_t{1} << 24;
    bool limit_behind = true;
    bool weight_dropoff = true;
  } volume;

  struct Visibility {
    double min_cos = 0.05;
    double occlusion_bias = 1e-4;
  } visibility;

  struct Texture {
    double lambda_view = 10.0;
    double lambda_seam = 0.1;
    double vignetting_a = -0.3;
    double vignetting_b = 0.0;
    double vignetting_c = 0.0;
    double tau_sq = 9.0;
    double min_fraction = 0.3;
    int page_size = 4096;
    int max_pages = 16;
  } texture;

  struct Semantic {
    double lambda_sem = 0.5;
  } semantic;

  struct Evaluate {
    std::array<double, 3> region_min{-5.0, -5.0, -1.0};
    std::array<double, 3> region_max{5.0, 5.0, 5.0};
    double bin_width = 0.005;
  } evaluate;

  struct Simulate {
    std::filesystem::path scene;  // SceneSpec JSON; empty for the built-in benchmark
    int beams = 128;
    double elevation_min_deg = -25.0;
    double elevation_max_deg = 15.0;
    double azimuth_step_deg = 0.2;
    double sigma = 0.01;
    double max_range = 100.0;
    double radius = 10.0;
    double speed = 5.0;
    double rate_hz = 10.0;
    double height = 2.3;
    std::array<double, 3> crop_min{-6.0, -6.0, -1.0};
    std::array<double, 3> crop_max{6.0, 6.0, 5.0};
    int cameras = 8;
    int width = 640;
    int image_height = 480;
    double fov_deg = 60.0;
    std::array<double, 3> target{0.0, 0.0, 1.0};
  } simulate;

  /// Dotted key names accepted in files and via the environment.
  static std::vector<std::string> keys();

  /// Parses JSON or TOML text. Sections are tables/objects; unknown keys are
  /// rejected with kConfig.
  static PipelineConfig from_json(const std::string& text);
  static PipelineConfig from_toml(const std::string& text);
  /// Dispatches on the extension (.json, .toml).
  static PipelineConfig load(const std::filesystem::path& path);

  /// Overrides fields from ATSDF_* variables. Values are parsed as JSON
  /// (numbers, booleans, arrays), falling back to a plain string.
  void apply_env(const EnvLookup& env);

  std::string to_json() const;

  /// Numeric range checks; throws kConfig.
  void validate() const;

  VignettingModel vignetting() const { return {texture.vignetting_a, texture.vignetting_b, texture.vignetting_c, {}}; }

  /// Resolved input locations (configured path or the simulate default).
  std::filesystem::path scans_dir() const;
  std::filesystem::path trajectory_path() const;
  std::filesystem::path frames_path() const;
  std::filesystem::path labels_path() const;
  std::filesystem::path palette_path() const;
  std::filesystem::path scene_path() const;
};

/// Stages in execution order, filtered by the config's stage toggles.
std::vector<Stage> enabled_stages(const PipelineConfig& config, std::span<const Stage> requested);

/// Validates the config and checks that every input of `stages` either
/// exists on disk or is produced by an earlier stage of the same run.
void validate_run(const PipelineConfig& config, std::span<const Stage> stages);

/// Runs the stages in order. Every stage reads its inputs from disk, writes
/// its artifacts via "<name>.partial" plus rename and records
/// <output_dir>/metrics/<stage>.json. Throws on the first failure.
void execute(const PipelineConfig& config, std::span<const Stage> stages, std::ostream& log);

/// execute() with error capture: on failure writes <output_dir>/error.json
/// {"stage", "code", "message"} and returns 2 for configuration errors and 1
/// otherwise; returns 0 on success.
int run(const PipelineConfig& config, std::span<const Stage> stages, std::ostream& log);

}  // namespace atsdf
