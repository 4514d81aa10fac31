#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deid/common.hpp"

namespace deid {

/// Dense 3D intensity grid. Intensities are kept in [0,1]; readers enforce
/// this at load time. Data is row-major with the last axis fastest.
struct Volume {
  Dims3 dims{0, 0, 0};
  std::array<float, 3> spacing_mm{1.0f, 1.0f, 1.0f};
  std::vector<float> voxels;

  std::int64_t size() const { return volume_of(dims); }
  float& at(int i, int j, int k) {
    return voxels[(static_cast<std::int64_t>(i) * dims[1] + j) * dims[2] + k];
  }
  float at(int i, int j, int k) const {
    return voxels[(static_cast<std::int64_t>(i) * dims[1] + j) * dims[2] + k];
  }
};

struct BinaryMask {
  Dims3 dims{0, 0, 0};
  std::vector<std::uint8_t> bits;

  std::int64_t size() const { return volume_of(dims); }
  std::int64_t count() const;
};

Volume make_volume(Dims3 dims, float fill = 0.0f);
BinaryMask make_mask(Dims3 dims, bool fill = false);
BinaryMask complement(const BinaryMask& m);

/// Voxelwise v*m, or v*(1-m) when invert is set. Spacing preserved.
Volume apply_mask(const Volume& v, const BinaryMask& m, bool invert);

struct MaskExtractParams {
  enum class Threshold { fixed, otsu };
  Threshold threshold_mode = Threshold::otsu;
  float fixed_threshold = 0.3f;
  int erosion_radius = 1;
  int dilation_radius = 1;
  float min_component_fraction = 0.05f;
};

/// Brain extraction: threshold, keep the largest 6-connected component,
/// then open it (erosion followed by dilation). The result is guaranteed to
/// be a single 6-connected component.
BinaryMask extract_brain_mask(const Volume& v, const MaskExtractParams& p = {});

/// Morphology with the radius-r 6-neighborhood ball (L1 ball); r = 0 is the
/// identity.
BinaryMask dilate(const BinaryMask& m, int r);
BinaryMask erode(const BinaryMask& m, int r);

/// Otsu threshold over a 256-bin histogram of [0,1] values.
float otsu_threshold(const std::vector<float>& values);

/// Labels 6-connected components; returns the mask of the largest one and
/// its voxel count (0 when the input is empty).
std::pair<BinaryMask, std::int64_t> largest_component(const BinaryMask& m);

double dice_overlap(const BinaryMask& a, const BinaryMask& b);

// File I/O. The native container is one line of JSON
// {"dims":[d,h,w],"spacing_mm":[sx,sy,sz],"dtype":"f32le"} followed by the
// raw little-endian float payload. read_volume also accepts a minimal
// NIfTI-1 subset (magic "n+1\0", 3D, float32 or int16, no extensions) and
// rescales intensities to [0,1].
void write_volume(const Volume& v, const std::string& path);
Volume read_volume(const std::string& path);

Volume mask_to_volume(const BinaryMask& m);
BinaryMask volume_to_mask(const Volume& v, float threshold = 0.5f);

}  // namespace deid
