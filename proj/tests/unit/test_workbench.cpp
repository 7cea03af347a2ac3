#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "solodiff/checkpoint.hpp"
#include "solodiff/cli.hpp"
#include "solodiff/config.hpp"
#include "solodiff/error.hpp"
#include "solodiff/image_io.hpp"

using namespace solodiff;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("solodiff_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& s) const { return (path / s).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Model tiny_model(ModelRole role) {
  DenoiserConfig c;
  c.depth = 1;
  c.width = 4;
  c.embed_dim = 4;
  c = config_for_role(c, role, 3);
  return Model{role, default_loss_mode(role), build_schedule(ScheduleKind::cosine, 20),
               build_denoiser(c, 3), 12, 3};
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("pixel conversion") {
  CHECK(byte_to_unit(0) == -1.0f);
  CHECK(byte_to_unit(255) == 1.0f);
  for (int v = 0; v < 256; ++v) CHECK(unit_to_byte(byte_to_unit(static_cast<unsigned char>(v))) == v);
  CHECK(unit_to_byte(3.0f) == 255);
  CHECK(unit_to_byte(-7.0f) == 0);
  CHECK(frame_filename(12) == "frame_000012.png");
}

TEST_CASE("area downscaling") {
  Tensor t(1, 4, 6);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) t.at(0, y, x) = float(x % 2);
  const Tensor s = fit_to_max_side(t, 3);
  CHECK(s.shape() == Shape{1, 2, 3});
  CHECK(s.at(0, 1, 2) == doctest::Approx(0.5));
  CHECK(fit_to_max_side(t, 0) == t);
  CHECK(fit_to_max_side(t, 6) == t);
}

TEST_CASE("PNG frames round trip and fail loudly") {
  TempDir dir("io");
  const VideoClip v = testing::moving_square(3, 10, 4, 1, 2);
  save_video_frames(v, dir / "clip");
  CHECK(fs::exists(dir / "clip/frame_000003.png"));
  const VideoClip back = load_video_frames(dir / "clip");
  REQUIRE(back.size() == 3);
  CHECK(back[2] == v[2]);

  const VideoClip single = load_video_frames(dir / "clip/frame_000002.png");
  CHECK(single.size() == 1);

  Tensor gray(1, 5, 5, 0.0f);
  save_image(gray, dir / "gray.png");
  CHECK(load_image(dir / "gray.png").channels() == 3);
  CHECK(load_image(dir / "gray.png").at(2, 1, 1) == byte_to_unit(128));

  fs::remove(dir / "clip/frame_000002.png");
  try {
    load_video_frames(dir / "clip");
    FAIL("expected a gap error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("frame_000002.png") != std::string::npos);
  }
  save_image(Tensor(3, 6, 6), dir / "clip/frame_000002.png");
  CHECK_THROWS_AS(load_video_frames(dir / "clip"), InputError);
  CHECK_THROWS_AS(load_video_frames(dir / "nothing"), InputError);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(load_image(dir / "junk.png"), InputError);
  CHECK_THROWS_AS(save_video_frames(std::span<const Tensor>{}, dir / "empty"), ParameterError);
  CHECK_THROWS_AS(save_image(Tensor(2, 4, 4), dir / "two.png"), ParameterError);
}

TEST_CASE("config JSON round trip, overrides and schema") {
  ExperimentConfig c;
  c.role = "predictor";
  c.seed = 18446744073709551615ull;
  c.depth = 5;
  c.no_projector = true;
  const json j = config_to_json(c);
  CHECK(config_from_json(j) == c);

  const json schema = config_schema();
  CHECK(schema["additionalProperties"] == false);
  for (const ConfigField& f : config_fields()) {
    CHECK(j.contains(f.name));
    CHECK(schema["properties"].contains(f.name));
    CHECK_FALSE(f.description.empty());
  }
  CHECK(j.size() == config_fields().size());

  CHECK_THROWS_AS(config_from_json(json{{"depht", 3}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"depth", "three"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);

  ExperimentConfig d;
  set_config_field(d, "curriculum_warmup", "-1");
  set_config_field(d, "lr", "1e-3");
  set_config_field(d, "clamp_x0", "false");
  CHECK(d.lr == 1e-3);
  CHECK_FALSE(d.clamp_x0);
  CHECK_THROWS_AS(set_config_field(d, "depth", "4x"), ConfigError);
  CHECK_THROWS_AS(set_config_field(d, "seed", "-3"), ConfigError);
  CHECK_THROWS_AS(set_config_field(d, "nope", "1"), ConfigError);
}

TEST_CASE("config validation and resolution") {
  ExperimentConfig c;
  validate_config(c);
  c.t_corr = 60;
  CHECK_THROWS_AS(validate_config(c), ConfigError);
  c = {};
  c.role = "critic";
  CHECK_THROWS_AS(validate_config(c), ConfigError);
  c = {};
  c.k = 0;
  CHECK_THROWS_AS(validate_config(c), ConfigError);
  c = {};
  c.depths = "4,x";
  CHECK_THROWS_AS(validate_config(c), ConfigError);

  c = {};
  CHECK(schedule_for(c, ModelRole::image).kind == ScheduleKind::linear);
  CHECK(schedule_for(c, ModelRole::predictor).kind == ScheduleKind::cosine);
  c.schedule = "linear";
  CHECK(schedule_for(c, ModelRole::predictor).kind == ScheduleKind::linear);
  c.noise_prediction = true;
  c.iterations = 77;
  const TrainTask t = train_task_for(c, ModelRole::image);
  CHECK(t.loss_mode == PredictionTarget::epsilon);
  CHECK(t.iterations == 77);
  CHECK(train_task_for(ExperimentConfig{}, ModelRole::predictor).iterations == 200000);
  c.resnet_blocks = true;
  c.k_range = 5;
  const DenoiserConfig n = denoiser_config(c);
  CHECK(n.block_kind == BlockKind::resnet);
  CHECK(n.max_frame_gap == 5);
  CHECK(parse_double_list("0.5, 0.75") == std::vector<double>{0.5, 0.75});
  CHECK(parse_int_list("4,8") == std::vector<int>{4, 8});
}

TEST_CASE("config files") {
  TempDir dir("cfg");
  std::ofstream(dir / "ok.json") << R"({"depth": 3, "role": "projector"})";
  std::ofstream(dir / "bad.json") << R"({"depth": 3,)";
  const ExperimentConfig c = load_config_file(dir / "ok.json");
  CHECK(c.depth == 3);
  CHECK(c.width == 64);
  CHECK_THROWS_AS(load_config_file(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config_file(dir / "none.json"), ConfigError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir("ckpt");
  const Model m = tiny_model(ModelRole::predictor);
  CheckpointInfo info;
  info.source_shape = {3, 16, 12};
  save_checkpoint(m, dir / "p", info);
  const LoadedCheckpoint l = load_checkpoint(dir / "p", ModelRole::predictor);
  CHECK(l.model.net.config() == m.net.config());
  CHECK(std::equal(m.net.parameters().begin(), m.net.parameters().end(),
                   l.model.net.parameters().begin()));
  CHECK(l.model.schedule.alpha_bars == m.schedule.alpha_bars);
  CHECK(l.model.mode == PredictionTarget::epsilon);
  CHECK(l.model.iterations == 12);
  CHECK(l.info.source_shape == info.source_shape);
  CHECK(l.manifest["k_range"] == 3);
  CHECK(l.manifest["version"] == kVersionTag);

  RandomSource r(1);
  const Tensor x = r.normal_tensor({3, 8, 8}), c = r.normal_tensor({3, 8, 8});
  const Tensor cond[] = {c};
  CHECK(denoise_forward(m.net, x, cond, 4, 1) == denoise_forward(l.model.net, x, cond, 4, 1));
}

TEST_CASE("checkpoint corruption and role mismatches are refused") {
  TempDir dir("ckpt_bad");
  save_checkpoint(tiny_model(ModelRole::predictor), dir / "p");
  CHECK_THROWS_AS(load_checkpoint(dir / "p", ModelRole::projector), ConfigError);
  CHECK_THROWS_AS(load_checkpoint_any(dir / "p", {ModelRole::image, ModelRole::projector}),
                  ConfigError);

  const std::string blob = slurp(dir / "p/weights.bin");
  auto write_blob = [&](const std::string& bytes) {
    std::ofstream(dir / "p/weights.bin", std::ios::binary | std::ios::trunc) << bytes;
  };
  std::string flipped = blob;
  flipped[flipped.size() - 3] ^= 0x10;
  write_blob(flipped);
  CHECK_THROWS_AS(load_checkpoint(dir / "p"), FormatError);
  write_blob(blob.substr(0, blob.size() - 4));
  CHECK_THROWS_AS(load_checkpoint(dir / "p"), FormatError);
  write_blob(blob + "x");
  CHECK_THROWS_AS(load_checkpoint(dir / "p"), FormatError);
  write_blob("XXXXXXXX" + blob.substr(8));
  CHECK_THROWS_AS(load_checkpoint(dir / "p"), FormatError);
  write_blob(blob);
  CHECK_NOTHROW(load_checkpoint(dir / "p"));

  json m = json::parse(slurp(dir / "p/manifest.json"));
  m["network"]["width"] = 5;
  std::ofstream(dir / "p/manifest.json", std::ios::trunc) << m.dump();
  CHECK_THROWS_AS(load_checkpoint(dir / "p"), FormatError);
  m.erase("network");
  std::ofstream(dir / "p/manifest.json", std::ios::trunc) << m.dump();
  CHECK_THROWS_AS(load_checkpoint(dir / "p"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), IoError);
}

TEST_CASE("CLI error hygiene") {
  CliResult r = cli({});
  CHECK(r.code == kExitUsage);
  CHECK(json::parse(r.err)["error"]["kind"] == "usage");

  r = cli({"train", "--no-such-flag"});
  CHECK(r.code == kExitUsage);

  r = cli({"train", "--depth", "0", "--input", "x", "--output", "y"});
  CHECK(r.code == kExitFailure);
  const json e = json::parse(r.err);
  CHECK(e["error"]["kind"] == "config");
  CHECK(e["command"] == "train");

  r = cli({"train", "--input", "/nonexistent/frames", "--output", "/tmp/x"});
  CHECK(r.code == kExitFailure);
  CHECK(json::parse(r.err)["error"]["kind"] == "input");

  r = cli({"generate-video", "--output", "/tmp/x"});
  CHECK(r.code == kExitFailure);
  CHECK(json::parse(r.err)["error"]["message"].get<std::string>().find("--predictor") !=
        std::string::npos);

  r = cli({"--print-schema"});
  CHECK(r.code == kExitOk);
  CHECK(json::parse(r.out)["type"] == "object");
  r = cli({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("generate-video") != std::string::npos);
}

TEST_CASE("CLI train and sample, with config file and flag precedence") {
  TempDir dir("cli");
  save_video_frames(testing::moving_square(5, 12, 4, 1, 3), dir / "video");
  std::ofstream(dir / "cfg.json")
      << R"({"depth": 1, "width": 4, "embed_dim": 4, "iterations": 3, "log_every": 0, "seed": 7})";
  CliResult r = cli({"train", "--config", dir / "cfg.json", "--role", "projector", "--input",
                     dir / "video", "--output", dir / "proj", "--iterations", "4"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(json::parse(r.out)["status"] == "ok");
  const json manifest = json::parse(slurp(dir / "proj/run_manifest.json"));
  CHECK(manifest["iterations"] == 4);
  CHECK(manifest["config"]["depth"] == 1);
  CHECK(manifest["config"]["seed"] == 7);
  CHECK(manifest.contains("wall_clock_seconds"));
  CHECK(slurp(dir / "proj/loss.csv").rfind("iteration,loss,lr,k\n", 0) == 0);

  r = cli({"generate-image", "--model", dir / "proj", "--output", dir / "img", "--samples", "2",
           "--out-height", "9", "--out-width", "14"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(load_image(dir / "img/frame_000002.png").shape() == Shape{3, 9, 14});
  CHECK(json::parse(slurp(dir / "img/provenance.json"))["frames"].size() == 2);

  r = cli({"generate-video", "--predictor", dir / "proj", "--output", dir / "vid"});
  CHECK(r.code == kExitFailure);
  CHECK(json::parse(r.err)["error"]["kind"] == "config");
}
