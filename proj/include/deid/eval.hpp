#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deid/nn.hpp"
#include "deid/phantom.hpp"
#include "deid/volume.hpp"

namespace deid {

/// 2D projection used in place of a 3D face rendering.
struct ProfileImage {
  int h = 0, w = 0;
  std::vector<float> pixels;  // row-major, [0,1]
};

/// Sagittal maximum-intensity projection: pixel (y,z) = max over x.
ProfileImage render_profile(const Volume& v);

/// Control transforms bracketing chance and ceiling.
Volume control_black(const Volume& v);
Volume control_original(const Volume& v);

/// One 5-way re-identification trial: a probe rendering plus five candidate
/// renderings, exactly one of which belongs to the probe's subject.
struct ReidTrial {
  ProfileImage probe;
  std::vector<ProfileImage> options;  // exactly 5
  int correct_index = 0;
};

struct EmbedderConfig {
  int image_dim = 32;
  int embed_dim = 64;
  float margin = 0.5f;
  double lr = 1e-3;
  int steps = 600;
  int batch = 16;
  std::uint64_t seed = 0;
};

/// 4-block strided conv net mapping a profile image to a unit-norm embedding.
struct EmbedderModel {
  EmbedderConfig cfg;
  nn::Conv2dLayer c1, c2, c3, c4;
  nn::LinearLayer fc;

  static EmbedderModel make(const EmbedderConfig& cfg, std::uint64_t seed);
  std::vector<nn::Param> params() const;
};

/// Embeddings for a batch of images, rows unit-normalized.
Tensorf embed_images(const EmbedderModel& m, const std::vector<const ProfileImage*>& images);
std::vector<float> embed_image(const EmbedderModel& m, const ProfileImage& img);

/// Metric learning on (subject, rendering) pairs with the triplet margin
/// loss; anchors and positives share a subject, negatives do not. Requires
/// at least 8 subjects with two renderings each.
EmbedderModel train_reid_embedder(const std::vector<std::vector<ProfileImage>>& subjects,
                                  const EmbedderConfig& cfg);

struct ReidAccuracy {
  double mean_pct = 0;
  double sd_pct = 0;
  int trials = 0;
};

/// Nearest-embedding 5-way accuracy (ties to the lowest option index);
/// mean and standard deviation are computed over equal trial batches.
ReidAccuracy reid_accuracy(const EmbedderModel& m, const std::vector<ReidTrial>& trials,
                           int n_batches = 10);

struct DiceResult {
  std::map<int, double> per_class;       // label -> score, absent when empty in both
  double class_average = 0;              // over all labels present
  double brain_class_average = 0;        // over brain labels only
};

DiceResult dice(const RegionLabels& a, const RegionLabels& b);

/// Intensity-band classifier: brain voxels are assigned to the four
/// subregions by bands centered on the phantom emission intensities;
/// non-brain voxels map to background.
RegionLabels toy_segment(const Volume& v, const BinaryMask& brain_mask);

}  // namespace deid
