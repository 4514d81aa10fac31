#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deid/nn.hpp"
#include "deid/volume.hpp"

namespace deid {

/// Integer code grid produced by a VQ-VAE encoder.
struct LatentGrid {
  Dims3 dims{0, 0, 0};
  int n_cv = 0;
  std::vector<std::uint16_t> codes;

  std::int64_t size() const { return volume_of(dims); }
};

/// Learned code vectors plus EMA bookkeeping for usage and dead-code
/// reseeding. Entry order is the code index and never changes.
struct Codebook {
  int n_cv = 0;
  int d_code = 0;
  std::vector<float> entries;     // [n_cv * d_code]
  std::vector<float> usage_ema;   // per entry
  std::vector<float> embed_avg;   // [n_cv * d_code]
  std::vector<int> dead_steps;    // consecutive steps below the usage threshold

  static Codebook make(Rng& rng, int n_cv, int d_code);
};

struct VqVaeConfig {
  int volume_dim = 32;  // S; latent side is S/4
  int n_cv = 256;
  int d_code = 32;
  int c1 = 16;
  int c2 = 32;
  float beta = 0.25f;         // commitment weight
  float ema_decay = 0.99f;
  int dead_code_steps = 50;
  float dead_code_threshold = 0.1f;
  std::string part = "brain";  // brain | skull

  int latent_dim() const { return volume_dim / 4; }
};

/// Encoder (two stride-2 conv stages with residual blocks) + vector
/// quantizer + mirrored transposed-conv decoder.
struct VqVaeModel {
  VqVaeConfig cfg;
  nn::Conv3dLayer enc_in;    // 1 -> c1, stride 2
  nn::ResBlock3d enc_res1;   // c1
  nn::Conv3dLayer enc_down;  // c1 -> c2, stride 2
  nn::ResBlock3d enc_res2;   // c2
  nn::Conv3dLayer enc_out;   // c2 -> d_code
  nn::Conv3dLayer dec_in;    // d_code -> c2
  nn::ResBlock3d dec_res1;   // c2
  nn::ConvT3dLayer dec_up1;  // c2 -> c1, stride 2
  nn::ResBlock3d dec_res2;   // c1
  nn::ConvT3dLayer dec_up2;  // c1 -> c1, stride 2
  nn::Conv3dLayer dec_out;   // c1 -> 1
  Codebook codebook;
  bool codebook_seeded = false;

  static VqVaeModel make(const VqVaeConfig& cfg, std::uint64_t seed);

  std::vector<nn::Param> params() const;
  Tensorf encode_continuous(const Tensorf& x) const;
  Tensorf decode_continuous(const Tensorf& z_q) const;
};

/// Nearest-codebook assignment, ties to the lowest index. z is
/// [N, d_code, s, s, s]; returned codes are row-major over (n, site). The
/// quantized tensor carries a straight-through backward (gradient copied to
/// z, none to the codebook).
std::pair<std::vector<std::uint16_t>, Tensorf> quantize(const Codebook& cb, const Tensorf& z);

LatentGrid encode(const VqVaeModel& m, const Volume& v);
Volume decode(const VqVaeModel& m, const LatentGrid& g);

struct VqLossRecord {
  double reconstruction = 0;
  double codebook = 0;
  double commitment = 0;
  double total = 0;
};

/// One optimizer step on a batch of equally-sized volumes. The codebook is
/// updated by EMA after the gradient step; entries unused for
/// dead_code_steps consecutive steps are reseeded from the batch.
VqLossRecord vqvae_train_step(VqVaeModel& m, const std::vector<Volume>& batch, Adam<float>& opt,
                              Rng& rng);

/// Paired integer-code dataset: E1 from the brain-masked volume, E2 from its
/// complement, order preserving.
std::vector<std::pair<LatentGrid, LatentGrid>> encode_dataset(
    const VqVaeModel& m_brain, const VqVaeModel& m_skull,
    const std::vector<std::pair<Volume, BinaryMask>>& dataset);

void save_vqvae(const VqVaeModel& m, const std::string& path);
VqVaeModel load_vqvae(const std::string& path);

/// One file per subject: JSON header line, then E1 and E2 as little-endian
/// uint16 payloads.
void write_latent_pair(const std::string& path, const LatentGrid& e1, const LatentGrid& e2);
std::pair<LatentGrid, LatentGrid> read_latent_pair(const std::string& path);

double psnr(const Volume& a, const Volume& b);

}  // namespace deid
