#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deid/nn.hpp"
#include "deid/vqvae.hpp"

namespace deid {

/// Keep-probability schedule alpha: [0,1] -> [0,1], alpha(0)=1, alpha(1)=0,
/// monotone non-increasing.
struct PerturbationSchedule {
  enum class Kind { linear, cosine };
  Kind kind = Kind::linear;

  double alpha(double t) const;
  static PerturbationSchedule from_name(const std::string& name);
  std::string name() const;
};

/// Token perturbation: each site keeps its code with probability alpha(t),
/// otherwise the code is resampled uniformly from {0,...,n_cv-1} (possibly
/// reproducing the original value). The kept mask marks untouched sites.
std::pair<LatentGrid, BinaryMask> perturb(const LatentGrid& codes, double t,
                                          const PerturbationSchedule& sched, Rng& rng);

struct MaeConfig {
  int latent_dim = 8;   // s
  int n_cv = 256;
  int d_emb = 64;       // per embedding table
  int width = 32;       // trunk channels
  int blocks = 6;       // residual blocks at constant resolution
  int time_dim = 64;    // sinusoidal feature count
  std::string schedule = "linear";
};

/// Conditional token predictor H(E2 | E1): embeds the noised skull grid and
/// the brain grid, concatenates channel-wise, adds a broadcast time
/// embedding, runs a constant-resolution conv-residual trunk, and emits
/// n_cv logits per site. The output head is zero-initialized so an untrained
/// model predicts the uniform distribution.
struct MaeModel {
  MaeConfig cfg;
  Tensorf skull_table;  // [n_cv, d_emb]
  Tensorf brain_table;  // [n_cv, d_emb]
  nn::Conv3dLayer proj_in;  // 2*d_emb -> width, 1x1x1
  nn::LinearLayer time_fc1;
  nn::LinearLayer time_fc2;
  std::vector<nn::ResBlock3d> trunk;
  nn::GroupNormLayer head_norm;
  nn::Conv3dLayer head;  // width -> n_cv, 1x1x1, zero-init

  static MaeModel make(const MaeConfig& cfg, std::uint64_t seed);
  std::vector<nn::Param> params() const;
};

/// Logits [N, n_cv, s, s, s] for a batch of (noised skull, brain, t) inputs.
Tensorf mae_forward_batch(const MaeModel& m, const std::vector<LatentGrid>& noised_skull,
                          const std::vector<LatentGrid>& brain, const std::vector<double>& t);

/// Single-element convenience wrapper.
Tensorf mae_forward(const MaeModel& m, const LatentGrid& noised_skull, const LatentGrid& brain,
                    double t);

struct MaeLossRecord {
  double cross_entropy = 0;
  std::vector<double> t_drawn;
};

/// One optimizer step: per element draws t ~ U(0,1), perturbs E2, and trains
/// the model to predict the original E2 at every site.
MaeLossRecord mae_train_step(MaeModel& m, const std::vector<std::pair<LatentGrid, LatentGrid>>& batch,
                             const PerturbationSchedule& sched, Adam<float>& opt, Rng& rng);

void save_mae(const MaeModel& m, const std::string& path);
MaeModel load_mae(const std::string& path);

}  // namespace deid
