// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 5-7 share a single full pipeline run at the desk
// configuration; criterion 9 reruns a reduced configuration twice and
// compares artifacts byte for byte.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deid/config.hpp"
#include "deid/mae.hpp"
#include "deid/ops.hpp"
#include "deid/optim.hpp"
#include "deid/phantom.hpp"
#include "deid/pipeline.hpp"
#include "deid/sampler.hpp"
#include "deid/vqvae.hpp"

using namespace deid;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

PipelineModels small_untrained_models(std::uint64_t seed) {
  VqVaeConfig vcfg;
  vcfg.volume_dim = 32;
  vcfg.n_cv = 64;
  vcfg.d_code = 16;
  vcfg.c1 = 8;
  vcfg.c2 = 16;
  vcfg.part = "brain";
  PipelineModels models;
  models.vqvae_brain = VqVaeModel::make(vcfg, seed);
  vcfg.part = "skull";
  models.vqvae_skull = VqVaeModel::make(vcfg, seed + 1);
  MaeConfig mcfg;
  mcfg.latent_dim = 8;
  mcfg.n_cv = 64;
  mcfg.d_emb = 16;
  mcfg.width = 16;
  mcfg.blocks = 2;
  mcfg.time_dim = 16;
  models.mae = MaeModel::make(mcfg, seed + 2);
  models.vqvae_brain_checksum = "untrained";
  models.vqvae_skull_checksum = "untrained";
  models.mae_checksum = "untrained";
  return models;
}

void criterion_1_brain_preservation() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dims3 dims{32, 32, 32};
  const auto ranges = IdentityRanges::for_dims(dims);
  auto models = small_untrained_models(1);
  Rng id_rng(1001);
  bool ok = true;
  std::string detail;
  for (int i = 0; i < 100 && ok; ++i) {
    const auto id = sample_identity(id_rng, ranges);
    const auto phantom = generate_phantom(id, dims, 5000 + i, 0.015f);
    SamplerConfig cfg;
    cfg.steps = 2;
    cfg.seed = 9000 + i;
    const DeidentResult r = deidentify(phantom.volume, models, cfg);
    const Volume skull = decode(models.vqvae_skull, r.sampled_latent);
    for (std::size_t v = 0; v < phantom.volume.voxels.size(); ++v) {
      const float want =
          r.brain_mask_used.bits[v] ? phantom.volume.voxels[v] : skull.voxels[v];
      if (std::memcmp(&r.output.voxels[v], &want, 4) != 0) {
        ok = false;
        detail = "voxel " + std::to_string(v) + " of phantom " + std::to_string(i) +
                 " differs";
        break;
      }
    }
  }
  if (ok) detail = "100 phantoms, untrained models, zero tolerance, " +
                   fmt("%.1f", seconds_since(t0)) + "s";
  report(1, ok, "brain voxels copied and non-brain voxels decoded, bit-exact", detail);
}

void criterion_2_perturbation_statistics() {
  const int n = 100000;
  const int n_cv = 256;
  Rng grid_rng(2002);
  LatentGrid codes;
  codes.dims = {50, 50, 40};
  codes.n_cv = n_cv;
  codes.codes.resize(n);
  for (auto& c : codes.codes) c = static_cast<std::uint16_t>(grid_rng.uniform_int(n_cv));
  bool ok = true;
  std::string detail = "both schedules within 3 binomial sigma";
  int stream = 0;
  for (const char* name : {"linear", "cosine"}) {
    const auto sched = PerturbationSchedule::from_name(name);
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      Rng rng(7000 + stream++);
      const auto [noised, kept] = perturb(codes, t, sched, rng);
      std::int64_t changed = 0;
      for (int i = 0; i < n; ++i)
        if (noised.codes[i] != codes.codes[i]) ++changed;
      const double p = (1.0 - sched.alpha(t)) * (n_cv - 1.0) / n_cv;
      const double sigma = std::sqrt(std::max(p * (1.0 - p) / n, 0.0));
      const double observed = changed / static_cast<double>(n);
      if (std::abs(observed - p) > 3.0 * sigma + 1e-12) {
        ok = false;
        detail = std::string(name) + " t=" + fmt("%.2f", t) + " observed " +
                 fmt("%.5f", observed) + " expected " + fmt("%.5f", p);
      }
    }
  }
  report(2, ok, "keep/resample statistics match (1-alpha)(n_cv-1)/n_cv", detail);
}

void criterion_3_quantizer_oracle() {
  bool ok = true;
  std::string detail = "10000 random vectors per n_cv in {4,16,64} plus constructed ties";
  for (int n_cv : {4, 16, 64}) {
    Rng rng(3000 + n_cv);
    const int d_code = 8;
    Codebook cb = Codebook::make(rng, n_cv, d_code);
    const int sites = 10000;
    std::vector<float> z(static_cast<std::size_t>(d_code) * sites);
    for (auto& v : z) v = static_cast<float>(rng.normal() * 0.4);
    auto zt = Tensorf::from_data({1, d_code, sites, 1, 1}, z, false);
    const auto [codes, zq] = quantize(cb, zt);
    for (int s = 0; s < sites && ok; ++s) {
      double best = 1e300;
      int best_k = 0;
      for (int k = 0; k < n_cv; ++k) {
        double dist = 0.0;
        for (int c = 0; c < d_code; ++c) {
          const double d =
              static_cast<double>(z[static_cast<std::size_t>(c) * sites + s]) -
              static_cast<double>(cb.entries[static_cast<std::size_t>(k) * d_code + c]);
          dist += d * d;
        }
        if (dist < best) {
          best = dist;
          best_k = k;
        }
      }
      if (codes[s] != best_k) {
        ok = false;
        detail = "disagreement at site " + std::to_string(s) + " for n_cv " +
                 std::to_string(n_cv);
      }
    }

    // Constructed ties: duplicated entry and a symmetric midpoint.
    Codebook tie_cb = Codebook::make(rng, n_cv, 2);
    tie_cb.entries[0] = 1.0f;
    tie_cb.entries[1] = 0.0f;
    tie_cb.entries[2] = -1.0f;
    tie_cb.entries[3] = 0.0f;
    for (int k = 2; k < n_cv; ++k) {
      tie_cb.entries[k * 2] = 40.0f + k;
      tie_cb.entries[k * 2 + 1] = 40.0f;
    }
    auto mid = Tensorf::from_data({1, 2, 1, 1, 1}, {0.0f, 0.0f}, false);
    if (quantize(tie_cb, mid).first[0] != 0) {
      ok = false;
      detail = "symmetric tie did not pick the lowest index at n_cv " + std::to_string(n_cv);
    }
    tie_cb.entries[2] = 1.0f;  // duplicate of entry 0
    auto near = Tensorf::from_data({1, 2, 1, 1, 1}, {0.9f, 0.05f}, false);
    if (quantize(tie_cb, near).first[0] != 0) {
      ok = false;
      detail = "duplicate-entry tie did not pick the lowest index";
    }
  }
  report(3, ok, "quantizer agrees with exhaustive nearest-neighbor search", detail);
}

template <typename Real>
Tensor<Real> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  std::int64_t n = 1;
  for (int s : shape) n *= s;
  std::vector<Real> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = static_cast<Real>(rng.normal() * scale);
  return Tensor<Real>::from_data(std::move(shape), std::move(data), false);
}

void criterion_4_gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  double worst = 0.0;

  for (std::uint64_t seed = 1; seed <= 5 && ok; ++seed) {
    Rng rng(4000 + seed);

    // (a) Two-layer conv3d network with a cross-entropy head.
    {
      auto w1 = random_tensor<double>({4, 1, 3, 3, 3}, rng, 0.5);
      auto w2 = random_tensor<double>({6, 4, 3, 3, 3}, rng, 0.5);
      auto x = random_tensor<double>({1, 1, 4, 4, 4}, rng, 0.3);
      std::vector<std::uint16_t> targets = {2, 5, 1, 0, 3, 4, 2, 1};
      auto f = [&](const Tensord& t) {
        auto h = ops::sigmoid(ops::conv3d(t, w1, 1, 1));
        return ops::softmax_cross_entropy(ops::conv3d(h, w2, 2, 1), targets);
      };
      const double err = grad_check<double>(f, x, 1e-3);
      worst = std::max(worst, err);
      if (err > 1e-3) {
        ok = false;
        detail = "conv net input grad error " + fmt("%.2e", err);
      }
      auto fw = [&](const Tensord& t) {
        auto h = ops::sigmoid(ops::conv3d(x, w1, 1, 1));
        return ops::softmax_cross_entropy(ops::conv3d(h, t, 2, 1), targets);
      };
      const double err_w = grad_check<double>(fw, w2, 1e-3);
      worst = std::max(worst, err_w);
      if (err_w > 1e-3) {
        ok = false;
        detail = "conv net weight grad error " + fmt("%.2e", err_w);
      }
    }

    // (b) VQ-VAE loss around the straight-through quantizer: the continuous
    // reconstruction path, the commitment path, and the exactness of the
    // gradient copy.
    {
      auto dec_w = random_tensor<double>({3, 1, 4, 4, 4}, rng, 0.4);
      auto target = random_tensor<double>({1, 1, 6, 6, 6}, rng, 0.3);
      auto zq_vals = random_tensor<double>({1, 3, 3, 3, 3}, rng, 0.4);
      auto f_recon = [&](const Tensord& t) {
        return ops::mse_loss(ops::sigmoid(ops::conv_transpose3d(t, dec_w, 2, 1, 0)), target);
      };
      const double err_recon = grad_check<double>(f_recon, zq_vals, 1e-4);
      worst = std::max(worst, err_recon);
      if (err_recon > 1e-3) {
        ok = false;
        detail = "vqvae reconstruction path grad error " + fmt("%.2e", err_recon);
      }
      auto anchor = random_tensor<double>({1, 3, 3, 3, 3}, rng, 0.4);
      auto f_commit = [&](const Tensord& t) {
        return ops::scale(ops::mse_loss(t, anchor), 0.25);
      };
      const double err_commit = grad_check<double>(f_commit, zq_vals, 1e-4);
      worst = std::max(worst, err_commit);
      if (err_commit > 1e-3) {
        ok = false;
        detail = "vqvae commitment path grad error " + fmt("%.2e", err_commit);
      }

      // Straight-through copy, float path, bitwise.
      Rng frng(4100 + seed);
      Codebook cb = Codebook::make(frng, 8, 3);
      std::vector<float> zdata(3 * 8);
      for (auto& v : zdata) v = static_cast<float>(frng.normal() * 0.4f);
      auto z = Tensorf::from_data({1, 3, 8, 1, 1}, zdata, true);
      auto [codes, z_q] = quantize(cb, z);
      auto ft = Tensorf::from_data({1, 3, 8, 1, 1},
                                   std::vector<float>(z_q.value().size(), 0.1f), false);
      ops::mse_loss(z_q, ft).backward();
      auto zq_leaf = Tensorf::from_data({1, 3, 8, 1, 1}, z_q.value(), true);
      ops::mse_loss(zq_leaf, ft).backward();
      if (z.grad() != zq_leaf.grad()) {
        ok = false;
        detail = "straight-through gradient is not an exact copy";
      }
    }

    // (c) MAE cross-entropy through embeddings and a conv trunk.
    {
      auto table = random_tensor<double>({16, 4}, rng, 0.3);
      auto trunk_w = random_tensor<double>({16, 4, 1, 1, 1}, rng, 0.4);
      std::vector<std::uint16_t> codes(8), targets(8);
      for (auto& c : codes) c = static_cast<std::uint16_t>(rng.uniform_int(16));
      for (auto& c : targets) c = static_cast<std::uint16_t>(rng.uniform_int(16));
      auto f = [&](const Tensord& t) {
        auto emb = ops::embed_codes(t, codes, 1, 2, 2, 2);
        return ops::softmax_cross_entropy(ops::conv3d(emb, trunk_w, 1, 0), targets);
      };
      const double err = grad_check<double>(f, table, 1e-4);
      worst = std::max(worst, err);
      if (err > 1e-3) {
        ok = false;
        detail = "mae cross-entropy grad error " + fmt("%.2e", err);
      }
    }
  }
  if (ok)
    detail = "max relative error " + fmt("%.2e", worst) + " over 5 seeds, " +
             fmt("%.0f", seconds_since(t0)) + "s";
  report(4, ok, "gradient checks for conv net, vqvae loss paths, and mae loss", detail);
}

PipelineConfig desk_config() {
  PipelineConfig cfg;  // library defaults are the desk-scale settings
  cfg.seed = 7;
  return cfg;
}

PipelineConfig reduced_config() {
  PipelineConfig cfg;
  cfg.dims = 16;
  cfg.subjects = 16;
  cfg.scans_per_subject = 2;
  cfg.train_fraction = 0.65f;
  cfg.n_cv = 32;
  cfg.d_code = 8;
  cfg.vq_c1 = 8;
  cfg.vq_c2 = 12;
  cfg.vq_steps = 6;
  cfg.vq_batch = 2;
  cfg.d_emb = 8;
  cfg.mae_width = 16;
  cfg.mae_blocks = 2;
  cfg.mae_steps = 6;
  cfg.mae_batch = 2;
  cfg.sampler_steps = 3;
  cfg.reid_trials = 50;
  cfg.trial_batches = 5;
  cfg.embedder_steps = 5;
  cfg.embedder_batch = 4;
  cfg.embed_dim = 16;
  cfg.seed = 7;
  return cfg;
}

nlohmann::json run_desk_pipeline(const std::string& out_dir, double& minutes) {
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineConfig cfg = desk_config();
  pipeline::StageLog log{false};
  const nlohmann::json report = pipeline::run_all(cfg, out_dir, log);
  minutes = seconds_since(t0) / 60.0;
  return report;
}

void criterion_9_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineConfig cfg = reduced_config();
  const std::string dir_a = "acceptance_c9_a";
  const std::string dir_b = "acceptance_c9_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  pipeline::StageLog quiet{true};
  pipeline::run_all(cfg, dir_a, quiet);
  pipeline::run_all(cfg, dir_b, quiet);

  bool ok = true;
  std::string detail;
  int files = 0;
  for (auto it = fs::recursive_directory_iterator(dir_a);
       it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file()) continue;
    ++files;
    const std::string rel = fs::relative(it->path(), dir_a).string();
    const fs::path other = fs::path(dir_b) / rel;
    if (!fs::exists(other)) {
      ok = false;
      detail = "missing in second run: " + rel;
      break;
    }
    std::ifstream fa(it->path(), std::ios::binary), fb(other, std::ios::binary);
    std::ostringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    if (sa.str() != sb.str()) {
      ok = false;
      detail = "byte mismatch: " + rel;
      break;
    }
  }
  if (ok)
    detail = std::to_string(files) + " artifacts byte-identical across two runs, " +
             fmt("%.0f", seconds_since(t0)) + "s";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  report(9, ok, "same master seed reproduces every artifact byte for byte", detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::string out_dir = "acceptance_out";
  for (int i = 1; i + 1 < argc + 1; ++i) {
    if (std::string(argv[i]) == "--out-dir" && i + 1 < argc) out_dir = argv[i + 1];
  }

  criterion_1_brain_preservation();
  criterion_2_perturbation_statistics();
  criterion_3_quantizer_oracle();
  criterion_4_gradient_correctness();

  // Criteria 5-7 share one full desk-scale pipeline run.
  double minutes = 0.0;
  nlohmann::json rep;
  bool pipeline_ok = true;
  try {
    rep = run_desk_pipeline(out_dir, minutes);
  } catch (const std::exception& e) {
    pipeline_ok = false;
    const std::string what = e.what();
    report(5, false, "desk pipeline run", what);
    report(6, false, "desk pipeline run", what);
    report(7, false, "desk pipeline run", what);
  }
  if (pipeline_ok) {
    const double dice_avg = rep.at("dice").at("brain_class_average").get<double>();
    report(5, dice_avg >= 0.99 && minutes <= 30.0,
           "held-out brain-class Dice >= 0.99 within the runtime budget",
           "dice " + fmt("%.4f", dice_avg) + ", run-all " + fmt("%.1f", minutes) + " min");

    const double orig = rep.at("reid").at("original").at("mean").get<double>();
    const double black = rep.at("reid").at("black").at("mean").get<double>();
    const double deid = rep.at("reid").at("deidentified").at("mean").get<double>();
    const bool ordering_ok =
        orig >= 90.0 && black >= 10.0 && black <= 30.0 && deid <= orig - 30.0;
    report(6, ordering_ok, "re-identification ordering original >> deidentified, black at chance",
           "original " + fmt("%.1f", orig) + ", deidentified " + fmt("%.1f", deid) + ", black " +
               fmt("%.1f", black));

    const double psnr_brain = rep.at("vqvae_psnr").at("brain").get<double>();
    const double psnr_skull = rep.at("vqvae_psnr").at("skull").get<double>();
    report(7, psnr_brain >= 25.0 && psnr_skull >= 25.0,
           "held-out reconstruction PSNR >= 25 dB for both compressors",
           "brain " + fmt("%.1f", psnr_brain) + " dB, skull " + fmt("%.1f", psnr_skull) + " dB");
  }

  // Criterion 8: compression factor, integer arithmetic.
  {
    VqVaeConfig cfg;
    cfg.volume_dim = 32;
    VqVaeModel m = VqVaeModel::make(cfg, 8);
    const Volume v = make_volume({32, 32, 32}, 0.5f);
    const LatentGrid g = encode(m, v);
    const std::int64_t factor = v.size() / g.size();
    VqVaeConfig paper;
    paper.volume_dim = 256;
    const std::int64_t paper_factor =
        (256LL * 256 * 256) /
        (static_cast<std::int64_t>(paper.latent_dim()) * paper.latent_dim() * paper.latent_dim());
    const bool ok = factor == 64 && paper_factor == 64 && g.dims == Dims3{8, 8, 8};
    report(8, ok, "latent grid holds 64x fewer sites than the volume",
           "32^3 -> 8^3 factor " + std::to_string(factor) + ", 256^3 -> 64^3 factor " +
               std::to_string(paper_factor));
  }

  criterion_9_determinism();

  std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
              g_failures);
  return g_failures == 0 ? 0 : 1;
}
