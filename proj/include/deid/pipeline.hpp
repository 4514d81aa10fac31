#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "deid/config.hpp"
#include "deid/eval.hpp"
#include "deid/phantom.hpp"
#include "deid/sampler.hpp"

namespace deid::pipeline {

// Stage seed indices for counter-based derivation from the master seed.
inline constexpr std::uint64_t kSeedPhantom = 1;
inline constexpr std::uint64_t kSeedVqBrain = 2;
inline constexpr std::uint64_t kSeedVqSkull = 3;
inline constexpr std::uint64_t kSeedMae = 4;
inline constexpr std::uint64_t kSeedDeid = 5;
inline constexpr std::uint64_t kSeedReid = 6;

std::string subject_dir(const std::string& out_dir, int subject);
std::string scan_path(const std::string& out_dir, int subject, int scan);
std::string mask_path(const std::string& out_dir, int subject);
std::string labels_path(const std::string& out_dir, int subject);
std::string identity_path(const std::string& out_dir, int subject);
std::string vqvae_ckpt_path(const std::string& out_dir, const std::string& part);
std::string mae_ckpt_path(const std::string& out_dir);
std::string latent_path(const std::string& out_dir, int subject, int scan);
std::string deid_volume_path(const std::string& out_dir, int subject);
std::string deid_sidecar_path(const std::string& out_dir, int subject);
std::string report_path(const std::string& out_dir);
std::string table_path(const std::string& out_dir);

/// Labels travel in the native volume container as label/8 (exact in
/// binary floating point, so round trips are bit-exact).
Volume labels_to_volume(const RegionLabels& labels);
RegionLabels volume_to_labels(const Volume& v);

void require_artifact(const std::string& path);

struct StageLog {
  bool quiet = false;
  void info(const std::string& msg) const;
};

void run_phantom_gen(const PipelineConfig& cfg, const std::string& out_dir,
                     const StageLog& log = {});
void run_train_vqvae(const PipelineConfig& cfg, const std::string& out_dir,
                     const std::string& part, const std::string& ckpt_override = "",
                     const StageLog& log = {});
void run_encode_dataset(const PipelineConfig& cfg, const std::string& out_dir,
                        const StageLog& log = {});
void run_train_mae(const PipelineConfig& cfg, const std::string& out_dir,
                   const StageLog& log = {});
void run_deidentify_all(const PipelineConfig& cfg, const std::string& out_dir,
                        const StageLog& log = {});
nlohmann::json run_evaluate_reid(const PipelineConfig& cfg, const std::string& out_dir,
                                 const StageLog& log = {});
nlohmann::json run_evaluate_dice(const PipelineConfig& cfg, const std::string& out_dir,
                                 const StageLog& log = {});

/// Full sequence; writes reports/report.json and reports/table.txt and
/// returns the report. Every artifact is a pure function of the config and
/// master seed.
nlohmann::json run_all(const PipelineConfig& cfg, const std::string& out_dir,
                       const StageLog& log = {});

/// De-identifies a single volume file; writes the output volume plus a JSON
/// sidecar with seeds, sampler settings, and model checksums.
void deidentify_file(const PipelineConfig& cfg, const std::string& out_dir,
                     const std::string& input_path, const std::string& output_path,
                     std::uint64_t seed);

PipelineModels load_models(const PipelineConfig& cfg, const std::string& out_dir);

}  // namespace deid::pipeline
