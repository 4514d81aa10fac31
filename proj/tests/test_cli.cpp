#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "deid/config.hpp"
#include "deid/pipeline.hpp"

using namespace deid;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const char* name) {
  const auto path = fs::temp_directory_path() / name;
  fs::remove_all(path);
  fs::create_directories(path);
  return path.string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough to run inside the unit suite while touching every stage.
PipelineConfig tiny_pipeline_config() {
  PipelineConfig cfg;
  cfg.dims = 16;
  cfg.subjects = 16;
  cfg.scans_per_subject = 2;
  cfg.train_fraction = 0.65f;  // 10 train / 6 test
  cfg.n_cv = 32;
  cfg.d_code = 8;
  cfg.vq_c1 = 8;
  cfg.vq_c2 = 12;
  cfg.vq_steps = 4;
  cfg.vq_batch = 2;
  cfg.d_emb = 8;
  cfg.mae_width = 16;
  cfg.mae_blocks = 2;
  cfg.mae_steps = 4;
  cfg.mae_batch = 2;
  cfg.sampler_steps = 2;
  cfg.reid_trials = 20;
  cfg.trial_batches = 4;
  cfg.embedder_steps = 3;
  cfg.embedder_batch = 4;
  cfg.embed_dim = 16;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("toml subset: sections, comments, strings, arrays of scalars") {
  const auto kv = parse_toml_subset(
      "schema_version = 1  # trailing comment\n"
      "\n"
      "[data]\n"
      "dims = 32\n"
      "name = \"hello # not a comment\"\n"
      "[vqvae]\n"
      "beta = 0.25\n");
  CHECK(kv.at("schema_version") == "1");
  CHECK(kv.at("data.dims") == "32");
  CHECK(kv.at("data.name") == "hello # not a comment");
  CHECK(kv.at("vqvae.beta") == "0.25");
}

TEST_CASE("toml subset: malformed input is rejected with a line number") {
  CHECK_THROWS_WITH_AS(parse_toml_subset("key value\n"), doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_toml_subset("[data\nx = 1\n"), doctest::Contains("line 1"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_toml_subset("x = 1\nx = 2\n"), doctest::Contains("duplicate"),
                       ConfigError);
}

TEST_CASE("config: unknown and ill-typed fields are named in errors") {
  const std::string path = (fs::temp_directory_path() / "deid_cfg_bad.toml").string();
  {
    std::ofstream out(path);
    out << "[데이타]\nx = 1\n";
  }
  CHECK_THROWS_AS(PipelineConfig::from_file(path), ConfigError);
  {
    std::ofstream out(path);
    out << "[data]\ndims = thirty\n";
  }
  CHECK_THROWS_WITH_AS(PipelineConfig::from_file(path), doctest::Contains("data.dims"),
                       ConfigError);
  {
    std::ofstream out(path);
    out << "[data]\nwrong_field = 2\n";
  }
  CHECK_THROWS_WITH_AS(PipelineConfig::from_file(path), doctest::Contains("unknown field"),
                       ConfigError);
  fs::remove(path);
}

TEST_CASE("config: validation enforces the documented invariants") {
  PipelineConfig cfg;
  cfg.dims = 24;  // not a power of two
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("power of two"), ConfigError);
  cfg = PipelineConfig();
  cfg.schedule = "step";
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("schedule"), ConfigError);
  cfg = PipelineConfig();
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PipelineConfig();
  cfg.subjects = 9;  // train split would be 7 < 8
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config: to_toml round trips through from_file") {
  const std::string path = (fs::temp_directory_path() / "deid_cfg_rt.toml").string();
  PipelineConfig cfg = tiny_pipeline_config();
  {
    std::ofstream out(path);
    out << cfg.to_toml();
  }
  const PipelineConfig r = PipelineConfig::from_file(path);
  CHECK(r.dims == cfg.dims);
  CHECK(r.subjects == cfg.subjects);
  CHECK(r.n_cv == cfg.n_cv);
  CHECK(r.vq_steps == cfg.vq_steps);
  CHECK(r.schedule == cfg.schedule);
  CHECK(r.seed == cfg.seed);
  CHECK(r.temperature == cfg.temperature);
  fs::remove(path);
}

TEST_CASE("labels travel bit-exactly through the volume container") {
  RegionLabels labels;
  labels.dims = {4, 4, 4};
  labels.labels.resize(64);
  for (int i = 0; i < 64; ++i) labels.labels[i] = static_cast<std::uint8_t>(i % 8);
  const Volume v = pipeline::labels_to_volume(labels);
  const RegionLabels back = pipeline::volume_to_labels(v);
  CHECK(back.labels == labels.labels);
}

TEST_CASE("pipeline: missing upstream artifacts are reported by path") {
  const std::string dir = tmp_dir("deid_cli_missing");
  const PipelineConfig cfg = tiny_pipeline_config();
  pipeline::StageLog quiet{true};
  CHECK_THROWS_WITH_AS(pipeline::run_encode_dataset(cfg, dir, quiet),
                       doctest::Contains("stage dependency missing"), Error);
  CHECK_THROWS_WITH_AS(pipeline::run_train_mae(cfg, dir, quiet),
                       doctest::Contains("stage dependency missing"), Error);
  fs::remove_all(dir);
}

TEST_CASE("pipeline: part/path mismatch is refused") {
  const std::string dir = tmp_dir("deid_cli_mismatch");
  const PipelineConfig cfg = tiny_pipeline_config();
  pipeline::StageLog quiet{true};
  CHECK_THROWS_WITH_AS(
      pipeline::run_train_vqvae(cfg, dir, "brain", pipeline::vqvae_ckpt_path(dir, "skull"), quiet),
      doctest::Contains("part/path mismatch"), ConfigError);
  CHECK_THROWS_AS(pipeline::run_train_vqvae(cfg, dir, "head", "", quiet), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("pipeline: full tiny run plus rerun produce byte-identical artifacts") {
  const std::string dir = tmp_dir("deid_cli_full");
  const PipelineConfig cfg = tiny_pipeline_config();
  pipeline::StageLog quiet{true};

  const auto report1 = pipeline::run_all(cfg, dir, quiet);
  CHECK(report1.contains("reid"));
  CHECK(report1.contains("dice"));
  CHECK(report1.at("dice").at("brain_class_average").get<double>() > 0.0);

  // Spot checks on declared artifact paths.
  CHECK(fs::exists(pipeline::scan_path(dir, 0, 0)));
  CHECK(fs::exists(pipeline::identity_path(dir, 0)));
  CHECK(fs::exists(pipeline::vqvae_ckpt_path(dir, "brain")));
  CHECK(fs::exists(pipeline::latent_path(dir, cfg.subjects - 1, 0)));
  CHECK(fs::exists(pipeline::deid_volume_path(dir, cfg.train_subjects())));
  CHECK(fs::exists(pipeline::report_path(dir)));
  CHECK(fs::exists(pipeline::table_path(dir)));

  const std::string report_bytes = read_bytes(pipeline::report_path(dir));
  const std::string ckpt_bytes = read_bytes(pipeline::vqvae_ckpt_path(dir, "brain"));
  const std::string deid_bytes =
      read_bytes(pipeline::deid_volume_path(dir, cfg.train_subjects()));

  const auto report2 = pipeline::run_all(cfg, dir, quiet);
  CHECK(report2 == report1);
  CHECK(read_bytes(pipeline::report_path(dir)) == report_bytes);
  CHECK(read_bytes(pipeline::vqvae_ckpt_path(dir, "brain")) == ckpt_bytes);
  CHECK(read_bytes(pipeline::deid_volume_path(dir, cfg.train_subjects())) == deid_bytes);

  // The single-file entry point inherits the blending contract.
  const std::string single_out = dir + "/single.vol";
  pipeline::deidentify_file(cfg, dir, pipeline::scan_path(dir, cfg.subjects - 1, 1), single_out,
                            123);
  CHECK(fs::exists(single_out));
  CHECK(fs::exists(single_out + ".json"));
  const Volume x = read_volume(pipeline::scan_path(dir, cfg.subjects - 1, 1));
  const Volume y = read_volume(single_out);
  const BinaryMask b = extract_brain_mask(x);
  for (std::size_t i = 0; i < x.voxels.size(); ++i)
    if (b.bits[i]) CHECK(x.voxels[i] == y.voxels[i]);

  fs::remove_all(dir);
}

TEST_CASE("pipeline: sidecar records seeds and model checksums") {
  const std::string dir = tmp_dir("deid_cli_sidecar");
  const PipelineConfig cfg = tiny_pipeline_config();
  pipeline::StageLog quiet{true};
  pipeline::run_phantom_gen(cfg, dir, quiet);
  pipeline::run_train_vqvae(cfg, dir, "brain", "", quiet);
  pipeline::run_train_vqvae(cfg, dir, "skull", "", quiet);
  pipeline::run_encode_dataset(cfg, dir, quiet);
  pipeline::run_train_mae(cfg, dir, quiet);
  pipeline::run_deidentify_all(cfg, dir, quiet);

  const auto sidecar = nlohmann::json::parse(
      read_bytes(pipeline::deid_sidecar_path(dir, cfg.train_subjects())));
  CHECK(sidecar.contains("seed"));
  CHECK(sidecar.at("sampler").at("steps").get<int>() == cfg.sampler_steps);
  CHECK(sidecar.at("models").at("vqvae_brain").get<std::string>().size() == 16);
  CHECK(sidecar.at("brain_voxels").get<int>() > 0);
  fs::remove_all(dir);
}
