#pragma once

#include <cstdint>

#include "deid/volume.hpp"

namespace deid {

/// Voxel labels. The generator partitions every volume; the brain ground
/// truth is the union of Brain and the four subregions.
enum class Region : std::uint8_t {
  background = 0,
  skull = 1,
  face = 2,
  brain = 3,
  sub1 = 4,
  sub2 = 5,
  sub3 = 6,
  sub4 = 7,
};

constexpr int kNumRegions = 8;
constexpr int kFirstBrainRegion = 3;

/// Emission intensities of the four brain subregions (sub1..sub4). The toy
/// segmenter's bands are the midpoints between consecutive values.
constexpr float kSubregionIntensity[4] = {1.0f, 0.92f, 0.84f, 0.76f};
constexpr float kSkullIntensity = 0.26f;
constexpr float kFaceIntensity = 0.30f;
constexpr float kEarIntensity = 0.28f;
constexpr float kEyeSocketIntensity = 0.12f;
constexpr float kCsfIntensity = 0.04f;

struct RegionLabels {
  Dims3 dims{0, 0, 0};
  std::vector<std::uint8_t> labels;

  std::int64_t size() const { return volume_of(dims); }
};

/// Parametric description of a synthetic subject. Geometry is a pure
/// function of these fields; scan noise is applied separately.
struct PhantomIdentity {
  float skull_rx = 0, skull_ry = 0, skull_rz = 0;
  float nose_length = 0, nose_width = 0;
  float eye_socket_depth = 0;
  float jaw_protrusion = 0;
  float ear_scale = 0;
  float brain_rx = 0, brain_ry = 0, brain_rz = 0;
  std::uint64_t seed = 0;
};

/// Uniform sampling ranges, in voxels, for a given grid size. The defaults
/// target 32-voxel grids and scale linearly with the smallest axis; identity
/// variability is concentrated in the face and skull while the brain radii
/// vary only mildly.
struct IdentityRanges {
  float skull_rx_min, skull_rx_max;
  float skull_ry_min, skull_ry_max;
  float skull_rz_min, skull_rz_max;
  float nose_length_min, nose_length_max;
  float nose_width_min, nose_width_max;
  float eye_depth_min, eye_depth_max;
  float jaw_min, jaw_max;
  float ear_min, ear_max;
  float brain_rx_min, brain_rx_max;
  float brain_ry_min, brain_ry_max;
  float brain_rz_min, brain_rz_max;
  float shell_thickness;

  static IdentityRanges for_dims(const Dims3& dims);
};

PhantomIdentity sample_identity(Rng& rng, const IdentityRanges& ranges);

struct PhantomOutput {
  Volume volume;
  BinaryMask brain_mask;  // exact ground truth
  RegionLabels labels;
};

/// Renders the identity into a volume with additive Gaussian scan noise
/// (clipped to [0,1]). Throws "phantom out of bounds" when the geometry does
/// not fit the grid.
PhantomOutput generate_phantom(const PhantomIdentity& id, const Dims3& dims,
                               std::uint64_t scan_noise_seed, float noise_sigma = 0.015f);

BinaryMask ground_truth_mask(const RegionLabels& labels);

}  // namespace deid
