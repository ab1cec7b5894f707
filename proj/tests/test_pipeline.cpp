#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "atsdf/io.hpp"
#include "atsdf/pipeline.hpp"
#include "test_util.hpp"

namespace atsdf {
namespace {

namespace fs = std::filesystem;

const std::vector<Stage> kAll{Stage::kSimulate,   Stage::kReconstruct, Stage::kMesh,    Stage::kVisibility,
                              Stage::kTexture,    Stage::kSemantic,    Stage::kEvaluate};

PipelineConfig tiny(const fs::path& out) {
  PipelineConfig c;
  c.output_dir = out;
  c.seed = 11;
  c.volume.voxel_size = 0.1;
  c.volume.eps_min = 0.2;
  c.volume.eps_max = 0.6;
  c.simulate.beams = 16;
  c.simulate.azimuth_step_deg = 1.0;
  c.simulate.speed = 20;
  c.simulate.cameras = 4;
  c.simulate.width = 160;
  c.simulate.image_height = 120;
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return ErrorCode::kInvalidArgument;
}

EnvLookup fake_env(std::map<std::string, std::string> vars) {
  return [vars](const std::string& name) -> std::optional<std::string> {
    const auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

TEST(Config, JsonAndTomlAgree) {
  const auto a = PipelineConfig::from_json(
      R"({"seed": 4, "volume": {"voxel_size": 0.05, "eps_min": 0.2}, "stages": {"texture": false},
          "evaluate": {"region_min": [-1, -2, -3]}})");
  const auto b = PipelineConfig::from_toml(
      "seed = 4\n[volume]\nvoxel_size = 0.05\neps_min = 0.2\n[stages]\ntexture = false\n"
      "[evaluate]\nregion_min = [-1, -2, -3]\n");
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.seed, 4u);
  EXPECT_DOUBLE_EQ(a.volume.voxel_size, 0.05);
  EXPECT_FALSE(a.stages.texture);
  EXPECT_EQ(a.evaluate.region_min, (std::array<double, 3>{-1, -2, -3}));
  EXPECT_EQ(PipelineConfig::from_json(a.to_json()).to_json(), a.to_json());
}

TEST(Config, LoadDispatchesOnExtension) {
  const auto dir = test::temp_dir("config_load");
  write_file_atomic(dir / "c.toml", "[semantic]\nlambda_sem = 0.7\n");
  write_file_atomic(dir / "c.json", R"({"semantic": {"lambda_sem": 0.7}})");
  write_file_atomic(dir / "c.yaml", "semantic: 1\n");
  EXPECT_DOUBLE_EQ(PipelineConfig::load(dir / "c.toml").semantic.lambda_sem, 0.7);
  EXPECT_DOUBLE_EQ(PipelineConfig::load(dir / "c.json").semantic.lambda_sem, 0.7);
  EXPECT_EQ(code_of([&] { PipelineConfig::load(dir / "c.yaml"); }), ErrorCode::kConfig);
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_EQ(code_of([] { PipelineConfig::from_json(R"({"volume": {"voxel": 0.1}})"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { PipelineConfig::from_toml("[nope]\nx = 1\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { PipelineConfig::from_json(R"({"volume": {"voxel_size": "big"}})"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { PipelineConfig::from_toml("seed = [\n"); }), ErrorCode::kConfig);
}

TEST(Config, EnvironmentOverrides) {
  PipelineConfig c;
  c.apply_env(fake_env({{"ATSDF_VOLUME_EPS_MIN", "0.15"},
                        {"ATSDF_STAGES_SEMANTIC", "false"},
                        {"ATSDF_SEED", "99"},
                        {"ATSDF_OUTPUT_DIR", "/tmp/x"},
                        {"ATSDF_SIMULATE_TARGET", "[1, 2, 3]"}}));
  EXPECT_DOUBLE_EQ(c.volume.eps_min, 0.15);
  EXPECT_FALSE(c.stages.semantic);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.output_dir, fs::path("/tmp/x"));
  EXPECT_EQ(c.simulate.target, (std::array<double, 3>{1, 2, 3}));
  EXPECT_EQ(code_of([&] { c.apply_env(fake_env({{"ATSDF_VOLUME_K", "many"}})); }), ErrorCode::kConfig);
}

TEST(Config, EveryKeyHasAnEnvironmentName) {
  const auto keys = PipelineConfig::keys();
  EXPECT_GT(keys.size(), 40u);
  for (const auto& key : keys) {
    std::string var = kEnvPrefix;
    for (char ch : key) var += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    bool asked = false;
    PipelineConfig c;
    c.apply_env([&](const std::string& name) -> std::optional<std::string> {
      asked |= name == var;
      return std::nullopt;
    });
    EXPECT_TRUE(asked) << key;
  }
}

TEST(Config, ValidationRanges) {
  PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  c.volume.eps_min = 0.5;
  c.volume.eps_max = 0.3;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kConfig);
  c = PipelineConfig{};
  c.volume.voxel_size = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kConfig);
  c = PipelineConfig{};
  c.semantic.lambda_sem = -1;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kConfig);
  c = PipelineConfig{};
  c.simulate.beams = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kConfig);
}

TEST(Stages, NamesAndOrdering) {
  for (Stage s : kAll) EXPECT_EQ(stage_from_name(stage_name(s)), s);
  EXPECT_FALSE(stage_from_name("paint"));
  PipelineConfig c;
  c.stages.texture = false;
  const std::vector<Stage> requested{Stage::kEvaluate, Stage::kTexture, Stage::kMesh};
  EXPECT_EQ(enabled_stages(c, requested), (std::vector<Stage>{Stage::kMesh, Stage::kEvaluate}));
}

TEST(Run, MissingInputsFailBeforeWork) {
  const auto out = test::temp_dir("pipe_missing");
  PipelineConfig c = tiny(out);
  const std::vector<Stage> reconstruct{Stage::kReconstruct};
  EXPECT_EQ(code_of([&] { validate_run(c, reconstruct); }), ErrorCode::kConfig);
  std::ostringstream log;
  EXPECT_EQ(run(c, reconstruct, log), 2);
  EXPECT_TRUE(fs::exists(out / "error.json"));
  EXPECT_FALSE(fs::exists(out / "volume.atsf"));
  EXPECT_NO_THROW(validate_run(c, std::vector<Stage>{Stage::kSimulate, Stage::kReconstruct}));
}

TEST(Run, InvalidConfigWritesErrorReport) {
  const auto out = test::temp_dir("pipe_invalid");
  PipelineConfig c = tiny(out);
  c.volume.eps_min = 0.9;
  std::ostringstream log;
  EXPECT_EQ(run(c, kAll, log), 2);
  const std::string report = read_file(out / "error.json");
  EXPECT_NE(report.find("\"code\""), std::string::npos);
  EXPECT_FALSE(fs::exists(out / "sim"));
}

TEST(Run, EndToEndAndResume) {
  const auto out = test::temp_dir("pipe_e2e");
  const PipelineConfig c = tiny(out);
  std::ostringstream log;
  ASSERT_EQ(run(c, kAll, log), 0) << log.str();
  for (const char* name : {"mesh.ply", "visibility.csv", "textured.obj", "labeled.ply", "labels.json",
                           "error_report.json", "error_histogram.csv", "metrics/evaluate.json"}) {
    EXPECT_TRUE(fs::exists(out / name)) << name;
  }
  for (const auto& e : fs::recursive_directory_iterator(out)) {
    EXPECT_EQ(e.path().string().find(".partial"), std::string::npos) << e.path();
  }
  EXPECT_GT(read_ply(out / "mesh.ply").face_count(), 1000u);

  // Later stages resume from the serialized intermediates.
  const std::string labels = read_file(out / "labels.json");
  fs::remove(out / "labels.json");
  fs::remove(out / "labeled.ply");
  ASSERT_EQ(run(c, std::vector<Stage>{Stage::kSemantic}, log), 0) << log.str();
  EXPECT_EQ(read_file(out / "labels.json"), labels);
}

TEST(Run, StageFailureReturnsOne) {
  const auto out = test::temp_dir("pipe_fail");
  PipelineConfig c = tiny(out);
  std::ostringstream log;
  ASSERT_EQ(run(c, std::vector<Stage>{Stage::kSimulate}, log), 0);
  write_file_atomic(out / "sim" / "palette.json", "{broken");
  EXPECT_EQ(run(c, std::vector<Stage>{Stage::kReconstruct, Stage::kMesh, Stage::kVisibility, Stage::kSemantic}, log),
            1);
  EXPECT_NE(read_file(out / "error.json").find("semantic"), std::string::npos);
}

}  // namespace
}  // namespace atsdf
