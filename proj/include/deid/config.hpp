#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deid/common.hpp"

namespace deid {

/// Pipeline configuration with documented defaults, loadable from a small
/// TOML-style file ([section], key = value; ints, floats, bools, strings,
/// and integer arrays). Unknown keys are rejected so typos fail loudly.
struct PipelineConfig {
  int schema_version = 1;

  // data
  int dims = 32;              // S, power of two
  int subjects = 64;
  int scans_per_subject = 4;  // noise realizations per subject
  float noise_sigma = 0.015f;
  float train_fraction = 0.8f;

  // vqvae
  int n_cv = 256;
  int d_code = 32;
  int vq_c1 = 16;
  int vq_c2 = 32;
  float beta = 0.25f;
  float ema_decay = 0.99f;
  int dead_code_steps = 50;
  float dead_code_threshold = 0.1f;
  double vq_lr = 2e-3;
  int vq_batch = 2;
  int vq_steps = 240;

  // mae
  int d_emb = 64;
  int mae_width = 32;
  int mae_blocks = 6;
  std::string schedule = "linear";
  double mae_lr = 1e-3;
  int mae_batch = 4;
  int mae_steps = 350;

  // sampler
  int sampler_steps = 12;
  double temperature = 1.0;

  // eval
  int reid_trials = 500;
  int trial_batches = 10;
  int embed_dim = 64;
  float margin = 0.5f;
  double embedder_lr = 1e-3;
  int embedder_steps = 600;
  int embedder_batch = 16;

  std::uint64_t seed = 0;

  int latent_dim() const { return dims / 4; }
  int train_subjects() const {
    return static_cast<int>(train_fraction * static_cast<float>(subjects));
  }

  void validate() const;
  static PipelineConfig from_file(const std::string& path);
  std::string to_toml() const;
};

/// Minimal TOML-subset reader used by the config loader; exposed for tests.
std::map<std::string, std::string> parse_toml_subset(const std::string& text);

}  // namespace deid
