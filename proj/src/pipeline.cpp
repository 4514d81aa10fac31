#include "deid/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "deid/mae.hpp"
#include "deid/vqvae.hpp"

namespace deid::pipeline {

namespace fs = std::filesystem;

namespace {

std::string zpad(int v, int width = 3) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%0*d", width, v);
  return buf;
}

void ensure_dir(const std::string& path) { fs::create_directories(path); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("pipeline: cannot open '" + path + "' for writing");
  out << text;
}

}  // namespace

std::string subject_dir(const std::string& out_dir, int subject) {
  return out_dir + "/phantoms/subj" + zpad(subject);
}
std::string scan_path(const std::string& out_dir, int subject, int scan) {
  return subject_dir(out_dir, subject) + "/scan" + std::to_string(scan) + ".vol";
}
std::string mask_path(const std::string& out_dir, int subject) {
  return subject_dir(out_dir, subject) + "/mask.vol";
}
std::string labels_path(const std::string& out_dir, int subject) {
  return subject_dir(out_dir, subject) + "/labels.vol";
}
std::string identity_path(const std::string& out_dir, int subject) {
  return subject_dir(out_dir, subject) + "/identity.json";
}
std::string vqvae_ckpt_path(const std::string& out_dir, const std::string& part) {
  return out_dir + "/models/vqvae_" + part + ".ckpt";
}
std::string mae_ckpt_path(const std::string& out_dir) { return out_dir + "/models/mae.ckpt"; }
std::string latent_path(const std::string& out_dir, int subject, int scan) {
  return out_dir + "/latents/subj" + zpad(subject) + "_s" + std::to_string(scan) + ".lat";
}
std::string deid_volume_path(const std::string& out_dir, int subject) {
  return out_dir + "/deid/subj" + zpad(subject) + ".vol";
}
std::string deid_sidecar_path(const std::string& out_dir, int subject) {
  return out_dir + "/deid/subj" + zpad(subject) + ".json";
}
std::string report_path(const std::string& out_dir) { return out_dir + "/reports/report.json"; }
std::string table_path(const std::string& out_dir) { return out_dir + "/reports/table.txt"; }

Volume labels_to_volume(const RegionLabels& labels) {
  Volume v = make_volume(labels.dims);
  for (std::size_t i = 0; i < labels.labels.size(); ++i)
    v.voxels[i] = static_cast<float>(labels.labels[i]) / 8.0f;
  return v;
}

RegionLabels volume_to_labels(const Volume& v) {
  RegionLabels out;
  out.dims = v.dims;
  out.labels.resize(v.voxels.size());
  for (std::size_t i = 0; i < v.voxels.size(); ++i)
    out.labels[i] = static_cast<std::uint8_t>(v.voxels[i] * 8.0f + 0.5f);
  return out;
}

void require_artifact(const std::string& path) {
  if (!fs::exists(path)) throw Error("stage dependency missing: " + path);
}

void StageLog::info(const std::string& msg) const {
  if (!quiet) std::cerr << msg << "\n";
}

void run_phantom_gen(const PipelineConfig& cfg, const std::string& out_dir, const StageLog& log) {
  const Dims3 dims{cfg.dims, cfg.dims, cfg.dims};
  const auto ranges = IdentityRanges::for_dims(dims);
  const std::uint64_t stage_seed = derive_seed(cfg.seed, kSeedPhantom);
  Rng identity_rng(stage_seed);

  log.info("phantom-gen: " + std::to_string(cfg.subjects) + " subjects, " +
           std::to_string(cfg.scans_per_subject) + " scans each, dims " +
           std::to_string(cfg.dims));
  for (int s = 0; s < cfg.subjects; ++s) {
    const PhantomIdentity id = sample_identity(identity_rng, ranges);
    ensure_dir(subject_dir(out_dir, s));
    for (int r = 0; r < cfg.scans_per_subject; ++r) {
      const std::uint64_t noise_seed =
          derive_seed(stage_seed, static_cast<std::uint64_t>(s) * 1000 + r);
      const PhantomOutput out = generate_phantom(id, dims, noise_seed, cfg.noise_sigma);
      write_volume(out.volume, scan_path(out_dir, s, r));
      if (r == 0) {
        write_volume(mask_to_volume(out.brain_mask), mask_path(out_dir, s));
        write_volume(labels_to_volume(out.labels), labels_path(out_dir, s));
        nlohmann::json manifest;
        manifest["subject"] = s;
        manifest["split"] = s < cfg.train_subjects() ? "train" : "test";
        manifest["skull_radii"] = {id.skull_rx, id.skull_ry, id.skull_rz};
        manifest["brain_radii"] = {id.brain_rx, id.brain_ry, id.brain_rz};
        manifest["nose_length"] = id.nose_length;
        manifest["nose_width"] = id.nose_width;
        manifest["eye_socket_depth"] = id.eye_socket_depth;
        manifest["jaw_protrusion"] = id.jaw_protrusion;
        manifest["ear_scale"] = id.ear_scale;
        manifest["identity_seed"] = id.seed;
        manifest["scan_noise_sigma"] = cfg.noise_sigma;
        manifest["scans"] = cfg.scans_per_subject;
        write_text(identity_path(out_dir, s), manifest.dump(2) + "\n");
      }
    }
  }
}

namespace {

struct SubjectData {
  Volume scan;       // one realization
  BinaryMask mask;   // ground-truth brain mask
};

SubjectData load_subject_scan(const std::string& out_dir, int subject, int scan) {
  const std::string vpath = scan_path(out_dir, subject, scan);
  const std::string mpath = mask_path(out_dir, subject);
  require_artifact(vpath);
  require_artifact(mpath);
  SubjectData d;
  d.scan = read_volume(vpath);
  d.mask = volume_to_mask(read_volume(mpath));
  return d;
}

}  // namespace

void run_train_vqvae(const PipelineConfig& cfg, const std::string& out_dir,
                     const std::string& part, const std::string& ckpt_override,
                     const StageLog& log) {
  if (part != "brain" && part != "skull")
    throw ConfigError("train-vqvae: --part must be brain or skull, got '" + part + "'");
  const std::string other = part == "brain" ? "skull" : "brain";
  std::string ckpt = ckpt_override.empty() ? vqvae_ckpt_path(out_dir, part) : ckpt_override;
  if (ckpt == vqvae_ckpt_path(out_dir, other))
    throw ConfigError("train-vqvae: part/path mismatch: --part " + part +
                      " would overwrite the " + other + " checkpoint '" + ckpt + "'");

  const bool invert = part == "skull";
  const std::uint64_t stage_seed =
      derive_seed(cfg.seed, part == "brain" ? kSeedVqBrain : kSeedVqSkull);

  // Training pool: every scan realization of every training subject.
  std::vector<Volume> pool;
  for (int s = 0; s < cfg.train_subjects(); ++s)
    for (int r = 0; r < cfg.scans_per_subject; ++r) {
      SubjectData d = load_subject_scan(out_dir, s, r);
      pool.push_back(apply_mask(d.scan, d.mask, invert));
    }

  VqVaeConfig mcfg;
  mcfg.volume_dim = cfg.dims;
  mcfg.n_cv = cfg.n_cv;
  mcfg.d_code = cfg.d_code;
  mcfg.c1 = cfg.vq_c1;
  mcfg.c2 = cfg.vq_c2;
  mcfg.beta = cfg.beta;
  mcfg.ema_decay = cfg.ema_decay;
  mcfg.dead_code_steps = cfg.dead_code_steps;
  mcfg.dead_code_threshold = cfg.dead_code_threshold;
  mcfg.part = part;
  VqVaeModel model = VqVaeModel::make(mcfg, derive_seed(stage_seed, 0));

  Rng batch_rng(derive_seed(stage_seed, 1));
  Adam<float> opt(nn::values_of(model.params()), {cfg.vq_lr, 0.9, 0.999, 1e-8});

  for (int step = 0; step < cfg.vq_steps; ++step) {
    std::vector<Volume> batch;
    for (int b = 0; b < cfg.vq_batch; ++b)
      batch.push_back(pool[batch_rng.uniform_int(pool.size())]);
    const VqLossRecord rec = vqvae_train_step(model, batch, opt, batch_rng);
    if (step % 50 == 0 || step + 1 == cfg.vq_steps)
      log.info("train-vqvae[" + part + "] step " + std::to_string(step) + " recon " +
               std::to_string(rec.reconstruction) + " commit " + std::to_string(rec.commitment));
  }

  ensure_dir(out_dir + "/models");
  save_vqvae(model, ckpt);
}

void run_encode_dataset(const PipelineConfig& cfg, const std::string& out_dir,
                        const StageLog& log) {
  require_artifact(vqvae_ckpt_path(out_dir, "brain"));
  require_artifact(vqvae_ckpt_path(out_dir, "skull"));
  VqVaeModel m_brain = load_vqvae(vqvae_ckpt_path(out_dir, "brain"));
  VqVaeModel m_skull = load_vqvae(vqvae_ckpt_path(out_dir, "skull"));
  if (m_brain.cfg.part != "brain")
    throw ConfigError("encode-dataset: part/path mismatch: checkpoint '" +
                      vqvae_ckpt_path(out_dir, "brain") + "' holds part '" + m_brain.cfg.part +
                      "'");
  if (m_skull.cfg.part != "skull")
    throw ConfigError("encode-dataset: part/path mismatch: checkpoint '" +
                      vqvae_ckpt_path(out_dir, "skull") + "' holds part '" + m_skull.cfg.part +
                      "'");

  ensure_dir(out_dir + "/latents");
  log.info("encode-dataset: encoding " + std::to_string(cfg.subjects) + " subjects");
  for (int s = 0; s < cfg.subjects; ++s)
    for (int r = 0; r < cfg.scans_per_subject; ++r) {
      SubjectData d = load_subject_scan(out_dir, s, r);
      const auto pairs = encode_dataset(m_brain, m_skull, {{d.scan, d.mask}});
      write_latent_pair(latent_path(out_dir, s, r), pairs[0].first, pairs[0].second);
    }
}

void run_train_mae(const PipelineConfig& cfg, const std::string& out_dir, const StageLog& log) {
  std::vector<std::pair<LatentGrid, LatentGrid>> pool;
  for (int s = 0; s < cfg.train_subjects(); ++s)
    for (int r = 0; r < cfg.scans_per_subject; ++r) {
      const std::string path = latent_path(out_dir, s, r);
      require_artifact(path);
      pool.push_back(read_latent_pair(path));
    }

  MaeConfig mcfg;
  mcfg.latent_dim = cfg.latent_dim();
  mcfg.n_cv = cfg.n_cv;
  mcfg.d_emb = cfg.d_emb;
  mcfg.width = cfg.mae_width;
  mcfg.blocks = cfg.mae_blocks;
  mcfg.schedule = cfg.schedule;

  const std::uint64_t stage_seed = derive_seed(cfg.seed, kSeedMae);
  MaeModel model = MaeModel::make(mcfg, derive_seed(stage_seed, 0));
  Rng rng(derive_seed(stage_seed, 1));
  Adam<float> opt(nn::values_of(model.params()), {cfg.mae_lr, 0.9, 0.999, 1e-8});
  const PerturbationSchedule sched = PerturbationSchedule::from_name(cfg.schedule);

  for (int step = 0; step < cfg.mae_steps; ++step) {
    std::vector<std::pair<LatentGrid, LatentGrid>> batch;
    for (int b = 0; b < cfg.mae_batch; ++b)
      batch.push_back(pool[rng.uniform_int(pool.size())]);
    const MaeLossRecord rec = mae_train_step(model, batch, sched, opt, rng);
    if (step % 50 == 0 || step + 1 == cfg.mae_steps)
      log.info("train-mae step " + std::to_string(step) + " ce " +
               std::to_string(rec.cross_entropy));
  }

  ensure_dir(out_dir + "/models");
  save_mae(model, mae_ckpt_path(out_dir));
}

PipelineModels load_models(const PipelineConfig& cfg, const std::string& out_dir) {
  (void)cfg;
  const std::string brain_path = vqvae_ckpt_path(out_dir, "brain");
  const std::string skull_path = vqvae_ckpt_path(out_dir, "skull");
  const std::string mae_path = mae_ckpt_path(out_dir);
  require_artifact(brain_path);
  require_artifact(skull_path);
  require_artifact(mae_path);
  PipelineModels models{load_vqvae(brain_path), load_vqvae(skull_path), load_mae(mae_path),
                        file_checksum_hex(brain_path), file_checksum_hex(skull_path),
                        file_checksum_hex(mae_path)};
  if (models.vqvae_brain.cfg.part != "brain" || models.vqvae_skull.cfg.part != "skull")
    throw ConfigError("load_models: part/path mismatch between checkpoints and their roles");
  return models;
}

namespace {

nlohmann::json sampler_sidecar(const PipelineConfig& cfg, const DeidentResult& result) {
  nlohmann::json side;
  side["seed"] = result.seed;
  side["sampler"] = {{"steps", cfg.sampler_steps},
                     {"temperature", cfg.temperature},
                     {"schedule", cfg.schedule}};
  side["models"] = {{"vqvae_brain", result.vqvae_brain_checksum},
                    {"vqvae_skull", result.vqvae_skull_checksum},
                    {"mae", result.mae_checksum}};
  side["brain_voxels"] = result.brain_mask_used.count();
  return side;
}

SamplerConfig sampler_config(const PipelineConfig& cfg, std::uint64_t seed) {
  SamplerConfig s;
  s.steps = cfg.sampler_steps;
  s.schedule = PerturbationSchedule::from_name(cfg.schedule);
  s.temperature = cfg.temperature;
  s.seed = seed;
  return s;
}

}  // namespace

void run_deidentify_all(const PipelineConfig& cfg, const std::string& out_dir,
                        const StageLog& log) {
  PipelineModels models = load_models(cfg, out_dir);
  const std::uint64_t stage_seed = derive_seed(cfg.seed, kSeedDeid);
  ensure_dir(out_dir + "/deid");
  log.info("deidentify: processing " + std::to_string(cfg.subjects - cfg.train_subjects()) +
           " held-out subjects");
  for (int s = cfg.train_subjects(); s < cfg.subjects; ++s) {
    SubjectData d = load_subject_scan(out_dir, s, 0);
    const SamplerConfig scfg = sampler_config(cfg, derive_seed(stage_seed, s));
    const DeidentResult result = deidentify(d.scan, models, scfg);
    write_volume(result.output, deid_volume_path(out_dir, s));
    nlohmann::json side = sampler_sidecar(cfg, result);
    side["subject"] = s;
    write_text(deid_sidecar_path(out_dir, s), side.dump(2) + "\n");
  }
}

void deidentify_file(const PipelineConfig& cfg, const std::string& out_dir,
                     const std::string& input_path, const std::string& output_path,
                     std::uint64_t seed) {
  require_artifact(input_path);
  PipelineModels models = load_models(cfg, out_dir);
  const Volume x = read_volume(input_path);
  const SamplerConfig scfg = sampler_config(cfg, seed);
  const DeidentResult result = deidentify(x, models, scfg);
  write_volume(result.output, output_path);
  nlohmann::json side = sampler_sidecar(cfg, result);
  side["input"] = fs::path(input_path).filename().string();
  write_text(output_path + ".json", side.dump(2) + "\n");
}

namespace {

ProfileImage render_scan(const std::string& out_dir, int subject, int scan) {
  const std::string path = scan_path(out_dir, subject, scan);
  require_artifact(path);
  return render_profile(read_volume(path));
}

}  // namespace

nlohmann::json run_evaluate_reid(const PipelineConfig& cfg, const std::string& out_dir,
                                 const StageLog& log) {
  const std::uint64_t stage_seed = derive_seed(cfg.seed, kSeedReid);
  const int n_train = cfg.train_subjects();
  const int n_test = cfg.subjects - n_train;

  log.info("evaluate-reid: training embedder on " + std::to_string(n_train) + " subjects");
  std::vector<std::vector<ProfileImage>> train_images(n_train);
  for (int s = 0; s < n_train; ++s)
    for (int r = 0; r < cfg.scans_per_subject; ++r)
      train_images[s].push_back(render_scan(out_dir, s, r));

  EmbedderConfig ecfg;
  ecfg.image_dim = cfg.dims;
  ecfg.embed_dim = cfg.embed_dim;
  ecfg.margin = cfg.margin;
  ecfg.lr = cfg.embedder_lr;
  ecfg.steps = cfg.embedder_steps;
  ecfg.batch = cfg.embedder_batch;
  ecfg.seed = derive_seed(stage_seed, 0);
  const EmbedderModel embedder = train_reid_embedder(train_images, ecfg);

  // Per-subject rendering pools for the three conditions.
  std::vector<std::vector<ProfileImage>> originals(n_test);
  std::vector<ProfileImage> deid_renders(n_test);
  for (int i = 0; i < n_test; ++i) {
    const int s = n_train + i;
    for (int r = 0; r < cfg.scans_per_subject; ++r)
      originals[i].push_back(render_scan(out_dir, s, r));
    const std::string dpath = deid_volume_path(out_dir, s);
    require_artifact(dpath);
    deid_renders[i] = render_profile(read_volume(dpath));
  }
  ProfileImage black;
  black.h = cfg.dims;
  black.w = cfg.dims;
  black.pixels.assign(static_cast<std::size_t>(cfg.dims) * cfg.dims, 0.0f);

  const char* conditions[3] = {"original", "black", "deidentified"};
  nlohmann::json out;
  for (int c = 0; c < 3; ++c) {
    Rng rng(derive_seed(stage_seed, 100 + c));
    std::vector<ReidTrial> trials;
    trials.reserve(cfg.reid_trials);
    for (int k = 0; k < cfg.reid_trials; ++k) {
      const int subj = static_cast<int>(rng.uniform_int(n_test));
      ReidTrial trial;
      std::vector<int> distractors;
      while (static_cast<int>(distractors.size()) < 4) {
        int o = static_cast<int>(rng.uniform_int(n_test - 1));
        if (o >= subj) ++o;
        if (std::find(distractors.begin(), distractors.end(), o) == distractors.end())
          distractors.push_back(o);
      }
      trial.correct_index = static_cast<int>(rng.uniform_int(5));

      auto option_for = [&](int subject_idx) -> ProfileImage {
        switch (c) {
          case 0:
            return originals[subject_idx][rng.uniform_int(cfg.scans_per_subject)];
          case 1:
            return black;
          default:
            return deid_renders[subject_idx];
        }
      };

      if (c == 0) {
        // ORIGINAL: the correct option is the probe image itself.
        const int r = static_cast<int>(rng.uniform_int(cfg.scans_per_subject));
        trial.probe = originals[subj][r];
        trial.options.resize(5);
        trial.options[trial.correct_index] = originals[subj][r];
      } else {
        trial.probe = originals[subj][0];
        trial.options.resize(5);
        trial.options[trial.correct_index] = c == 1 ? black : deid_renders[subj];
      }
      int d = 0;
      for (int o = 0; o < 5; ++o) {
        if (o == trial.correct_index) continue;
        trial.options[o] = option_for(distractors[d++]);
      }
      trials.push_back(std::move(trial));
    }
    const ReidAccuracy acc = reid_accuracy(embedder, trials, cfg.trial_batches);
    out[conditions[c]] = {{"mean", acc.mean_pct}, {"sd", acc.sd_pct}, {"trials", acc.trials}};
    log.info(std::string("evaluate-reid: ") + conditions[c] + " " +
             std::to_string(acc.mean_pct) + " +/- " + std::to_string(acc.sd_pct));
  }
  return out;
}

nlohmann::json run_evaluate_dice(const PipelineConfig& cfg, const std::string& out_dir,
                                 const StageLog& log) {
  const int n_train = cfg.train_subjects();
  double brain_avg_sum = 0.0;
  int count = 0;
  std::map<int, double> per_class_sum;
  std::map<int, int> per_class_count;

  for (int s = n_train; s < cfg.subjects; ++s) {
    const std::string xpath = scan_path(out_dir, s, 0);
    const std::string ypath = deid_volume_path(out_dir, s);
    require_artifact(xpath);
    require_artifact(ypath);
    const Volume x = read_volume(xpath);
    const Volume y = read_volume(ypath);
    const RegionLabels seg_x = toy_segment(x, extract_brain_mask(x));
    const RegionLabels seg_y = toy_segment(y, extract_brain_mask(y));
    const DiceResult d = dice(seg_x, seg_y);
    brain_avg_sum += d.brain_class_average;
    ++count;
    for (const auto& [cls, score] : d.per_class) {
      per_class_sum[cls] += score;
      per_class_count[cls] += 1;
    }
  }

  nlohmann::json out;
  out["subjects"] = count;
  out["brain_class_average"] = count > 0 ? brain_avg_sum / count : 0.0;
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, total] : per_class_sum)
    per_class[std::to_string(cls)] = total / per_class_count[cls];
  out["per_class"] = per_class;
  log.info("evaluate-dice: brain class average " +
           std::to_string(out["brain_class_average"].get<double>()));
  return out;
}

namespace {

nlohmann::json compute_psnr_report(const PipelineConfig& cfg, const std::string& out_dir) {
  VqVaeModel m_brain = load_vqvae(vqvae_ckpt_path(out_dir, "brain"));
  VqVaeModel m_skull = load_vqvae(vqvae_ckpt_path(out_dir, "skull"));
  double brain_sum = 0.0, skull_sum = 0.0;
  int n = 0;
  for (int s = cfg.train_subjects(); s < cfg.subjects; ++s) {
    SubjectData d = load_subject_scan(out_dir, s, 0);
    const Volume brain_part = apply_mask(d.scan, d.mask, false);
    const Volume skull_part = apply_mask(d.scan, d.mask, true);
    brain_sum += psnr(decode(m_brain, encode(m_brain, brain_part)), brain_part);
    skull_sum += psnr(decode(m_skull, encode(m_skull, skull_part)), skull_part);
    ++n;
  }
  return {{"brain", brain_sum / n}, {"skull", skull_sum / n}, {"subjects", n}};
}

std::string format_table(const nlohmann::json& reid, const nlohmann::json& dice_report) {
  char buf[128];
  std::ostringstream out;
  out << "5-way re-identification accuracy (percent, mean +/- sd)\n";
  out << "---------------------------------------------------------\n";
  const char* rows[3] = {"black", "original", "deidentified"};
  const char* labels[3] = {"BLACK", "ORIGINAL", "DEIDENTIFIED"};
  for (int i = 0; i < 3; ++i) {
    const auto& r = reid.at(rows[i]);
    std::snprintf(buf, sizeof(buf), "%-14s %6.2f +/- %5.2f\n", labels[i],
                  r.at("mean").get<double>(), r.at("sd").get<double>());
    out << buf;
  }
  out << "---------------------------------------------------------\n";
  std::snprintf(buf, sizeof(buf), "%-14s %.4f\n", "DICE(brain)",
                dice_report.at("brain_class_average").get<double>());
  out << buf;
  return out.str();
}

}  // namespace

nlohmann::json run_all(const PipelineConfig& cfg, const std::string& out_dir, const StageLog& log) {
  cfg.validate();
  ensure_dir(out_dir);

  run_phantom_gen(cfg, out_dir, log);
  run_train_vqvae(cfg, out_dir, "brain", "", log);
  run_train_vqvae(cfg, out_dir, "skull", "", log);
  run_encode_dataset(cfg, out_dir, log);
  run_train_mae(cfg, out_dir, log);
  run_deidentify_all(cfg, out_dir, log);
  const nlohmann::json reid = run_evaluate_reid(cfg, out_dir, log);
  const nlohmann::json dice_report = run_evaluate_dice(cfg, out_dir, log);
  const nlohmann::json psnr_report = compute_psnr_report(cfg, out_dir);

  nlohmann::json report;
  report["schema_version"] = 1;
  report["master_seed"] = cfg.seed;
  report["dims"] = cfg.dims;
  report["subjects"] = cfg.subjects;
  report["train_subjects"] = cfg.train_subjects();
  report["reid"] = reid;
  report["dice"] = dice_report;
  report["vqvae_psnr"] = psnr_report;
  report["checkpoints"] = {
      {"vqvae_brain", file_checksum_hex(vqvae_ckpt_path(out_dir, "brain"))},
      {"vqvae_skull", file_checksum_hex(vqvae_ckpt_path(out_dir, "skull"))},
      {"mae", file_checksum_hex(mae_ckpt_path(out_dir))}};

  ensure_dir(out_dir + "/reports");
  write_text(report_path(out_dir), report.dump(2) + "\n");
  write_text(table_path(out_dir), format_table(reid, dice_report));
  return report;
}

}  // namespace deid::pipeline
