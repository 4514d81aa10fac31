#include "deid/sampler.hpp"

#include <cmath>

namespace deid {

namespace {

LatentGrid random_grid(const Dims3& dims, int n_cv, Rng& rng) {
  LatentGrid g;
  g.dims = dims;
  g.n_cv = n_cv;
  g.codes.resize(static_cast<std::size_t>(volume_of(dims)));
  for (auto& c : g.codes)
    c = static_cast<std::uint16_t>(rng.uniform_int(static_cast<std::uint64_t>(n_cv)));
  return g;
}

/// Per-site categorical sample from softmax(logits / temperature); CDF
/// inversion, so a zero-probability tail never wins and exact ties resolve
/// to the lowest index as temperature -> 0.
LatentGrid sample_categorical(const Tensorf& logits, double temperature, Rng& rng) {
  const int v = logits.shape()[1];
  const int s0 = logits.shape()[2], s1 = logits.shape()[3], s2 = logits.shape()[4];
  const std::int64_t sp = static_cast<std::int64_t>(s0) * s1 * s2;
  LatentGrid g;
  g.dims = {s0, s1, s2};
  g.n_cv = v;
  g.codes.resize(static_cast<std::size_t>(sp));
  std::vector<double> p(static_cast<std::size_t>(v));
  for (std::int64_t s = 0; s < sp; ++s) {
    double mx = -1e300;
    for (int k = 0; k < v; ++k)
      mx = std::max(mx, static_cast<double>(logits.value()[static_cast<std::int64_t>(k) * sp + s]));
    double sum = 0.0;
    for (int k = 0; k < v; ++k) {
      const double e = std::exp(
          (static_cast<double>(logits.value()[static_cast<std::int64_t>(k) * sp + s]) - mx) /
          temperature);
      p[k] = e;
      sum += e;
    }
    const double u = rng.uniform() * sum;
    double acc = 0.0;
    int pick = v - 1;
    for (int k = 0; k < v; ++k) {
      acc += p[k];
      if (u < acc) {
        pick = k;
        break;
      }
    }
    g.codes[static_cast<std::size_t>(s)] = static_cast<std::uint16_t>(pick);
  }
  return g;
}

}  // namespace

LatentGrid sample_skull_latents(const MaeModel& mae, const LatentGrid& brain,
                                const SamplerConfig& cfg) {
  cfg.validate();
  const int s = mae.cfg.latent_dim;
  if (brain.dims[0] != s || brain.dims[1] != s || brain.dims[2] != s)
    throw ConfigError("sample_skull_latents: brain latent dims do not match model latent side " +
                      std::to_string(s));
  if (brain.n_cv != mae.cfg.n_cv)
    throw ConfigError("sample_skull_latents: brain latent n_cv does not match model");

  Rng rng(cfg.seed);
  const int T = cfg.steps;
  LatentGrid current = random_grid(brain.dims, mae.cfg.n_cv, rng);
  for (int i = 0; i < T; ++i) {
    const double t = 1.0 - static_cast<double>(i) / T;
    auto logits = mae_forward(mae, current, brain, t);
    current = sample_categorical(logits, cfg.temperature, rng);
    if (i + 1 < T) {
      const double t_next = 1.0 - static_cast<double>(i + 1) / T;
      current = perturb(current, t_next, cfg.schedule, rng).first;
    }
  }
  return current;
}

DeidentResult deidentify(const Volume& x, const PipelineModels& models, const SamplerConfig& cfg,
                         const MaskExtractParams& mask_params) {
  cfg.validate();
  const int S = models.vqvae_brain.cfg.volume_dim;
  if (x.dims[0] != S || x.dims[1] != S || x.dims[2] != S)
    throw DimensionError("deidentify: input dims do not match model volume_dim " +
                         std::to_string(S));

  DeidentResult result;
  result.seed = cfg.seed;
  result.vqvae_brain_checksum = models.vqvae_brain_checksum;
  result.vqvae_skull_checksum = models.vqvae_skull_checksum;
  result.mae_checksum = models.mae_checksum;

  BinaryMask mask;
  try {
    mask = extract_brain_mask(x, mask_params);
  } catch (const std::exception& e) {
    throw Error(std::string("deidentify[mask]: ") + e.what());
  }

  LatentGrid e1;
  try {
    e1 = encode(models.vqvae_brain, apply_mask(x, mask, false));
  } catch (const std::exception& e) {
    throw Error(std::string("deidentify[encode]: ") + e.what());
  }

  LatentGrid e2;
  try {
    e2 = sample_skull_latents(models.mae, e1, cfg);
  } catch (const std::exception& e) {
    throw Error(std::string("deidentify[sample]: ") + e.what());
  }

  Volume skull;
  try {
    skull = decode(models.vqvae_skull, e2);
  } catch (const std::exception& e) {
    throw Error(std::string("deidentify[decode]: ") + e.what());
  }

  // Y = (1 - B) * decoded skull + B * X, with hard 0/1 weights: brain voxels
  // are copied bit-exactly, everything else comes from the decoder.
  Volume y = skull;
  y.spacing_mm = x.spacing_mm;
  for (std::size_t i = 0; i < y.voxels.size(); ++i)
    if (mask.bits[i]) y.voxels[i] = x.voxels[i];

  result.output = std::move(y);
  result.sampled_latent = std::move(e2);
  result.brain_mask_used = std::move(mask);
  return result;
}

}  // namespace deid
