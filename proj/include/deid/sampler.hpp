#pragma once

#include <cstdint>
#include <string>

#include "deid/mae.hpp"
#include "deid/vqvae.hpp"

namespace deid {

struct SamplerConfig {
  int steps = 12;       // T >= 1
  PerturbationSchedule schedule;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("sampler: temperature must be > 0");
  }
};

/// Iterative refinement over the latent grid: start from uniform-random
/// codes and walk t down a uniform grid from 1; at each step sample every
/// site from softmax(logits / temperature), then renoise at the next t
/// (except after the last step).
LatentGrid sample_skull_latents(const MaeModel& mae, const LatentGrid& brain,
                                const SamplerConfig& cfg);

struct DeidentResult {
  Volume output;
  LatentGrid sampled_latent;
  BinaryMask brain_mask_used;
  std::uint64_t seed = 0;
  std::string vqvae_brain_checksum;
  std::string vqvae_skull_checksum;
  std::string mae_checksum;
};

struct PipelineModels {
  VqVaeModel vqvae_brain;
  VqVaeModel vqvae_skull;
  MaeModel mae;
  std::string vqvae_brain_checksum;
  std::string vqvae_skull_checksum;
  std::string mae_checksum;
};

/// Full de-identification of one scan: extract the brain mask, encode the
/// brain, sample a replacement skull latent conditioned on it, decode, and
/// blend so that brain voxels are copied from the input bit-exactly and all
/// other voxels come from the decoded skull.
DeidentResult deidentify(const Volume& x, const PipelineModels& models, const SamplerConfig& cfg,
                         const MaskExtractParams& mask_params = {});

}  // namespace deid
