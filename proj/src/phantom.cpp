#include "deid/phantom.hpp"

#include <algorithm>
#include <cmath>

namespace deid {

IdentityRanges IdentityRanges::for_dims(const Dims3& dims) {
  // Scale so the worst-case geometry (skull + nose/ears) clears the grid
  // boundary at any dims >= 16; g = 1 at the 32-voxel reference size.
  const float f = (static_cast<float>(std::min({dims[0], dims[1], dims[2]})) - 2.0f) / 30.0f;
  IdentityRanges r;
  r.skull_rx_min = 10.5f * f;
  r.skull_rx_max = 12.5f * f;
  r.skull_ry_min = 10.5f * f;
  r.skull_ry_max = 12.5f * f;
  r.skull_rz_min = 9.5f * f;
  r.skull_rz_max = 10.7f * f;
  r.nose_length_min = 2.0f * f;
  r.nose_length_max = 4.2f * f;
  r.nose_width_min = 1.0f * f;
  r.nose_width_max = 2.2f * f;
  r.eye_depth_min = 1.0f * f;
  r.eye_depth_max = 2.5f * f;
  r.jaw_min = 0.5f * f;
  r.jaw_max = 2.2f * f;
  r.ear_min = 0.8f;
  r.ear_max = 1.5f;
  r.brain_rx_min = 6.0f * f;
  r.brain_rx_max = 7.0f * f;
  r.brain_ry_min = 6.0f * f;
  r.brain_ry_max = 7.0f * f;
  r.brain_rz_min = 5.0f * f;
  r.brain_rz_max = 6.0f * f;
  r.shell_thickness = std::max(1.0f, 2.0f * f);
  return r;
}

namespace {

float uniform_in(Rng& rng, float lo, float hi) {
  return lo + static_cast<float>(rng.uniform()) * (hi - lo);
}

}  // namespace

PhantomIdentity sample_identity(Rng& rng, const IdentityRanges& r) {
  PhantomIdentity id;
  id.skull_rx = uniform_in(rng, r.skull_rx_min, r.skull_rx_max);
  id.skull_ry = uniform_in(rng, r.skull_ry_min, r.skull_ry_max);
  id.skull_rz = uniform_in(rng, r.skull_rz_min, r.skull_rz_max);
  id.nose_length = uniform_in(rng, r.nose_length_min, r.nose_length_max);
  id.nose_width = uniform_in(rng, r.nose_width_min, r.nose_width_max);
  id.eye_socket_depth = uniform_in(rng, r.eye_depth_min, r.eye_depth_max);
  id.jaw_protrusion = uniform_in(rng, r.jaw_min, r.jaw_max);
  id.ear_scale = uniform_in(rng, r.ear_min, r.ear_max);
  id.brain_rx = uniform_in(rng, r.brain_rx_min, r.brain_rx_max);
  id.brain_ry = uniform_in(rng, r.brain_ry_min, r.brain_ry_max);
  id.brain_rz = uniform_in(rng, r.brain_rz_min, r.brain_rz_max);
  id.seed = rng.next_u64();
  return id;
}

namespace {

struct Writer {
  Volume* vol;
  RegionLabels* labels;

  void set(std::int64_t idx, float intensity, Region r) {
    vol->voxels[idx] = intensity;
    labels->labels[idx] = static_cast<std::uint8_t>(r);
  }
};

inline float ellipsoid_q(float dx, float dy, float dz, float rx, float ry, float rz) {
  const float qx = dx / rx, qy = dy / ry, qz = dz / rz;
  return qx * qx + qy * qy + qz * qz;
}

}  // namespace

PhantomOutput generate_phantom(const PhantomIdentity& id, const Dims3& dims,
                               std::uint64_t scan_noise_seed, float noise_sigma) {
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 16) throw Error("generate_phantom: dims must be >= 16 per axis");

  const float cx = (dims[0] - 1) / 2.0f;
  const float cy = (dims[1] - 1) / 2.0f;
  const float cz = (dims[2] - 1) / 2.0f;
  const float g = (static_cast<float>(std::min({dims[0], dims[1], dims[2]})) - 2.0f) / 30.0f;
  const float th = IdentityRanges::for_dims(dims).shell_thickness;
  const float ear_r = 1.2f * g * id.ear_scale;

  const float extent_x = id.skull_rx + ear_r;
  const float extent_y =
      std::max(id.skull_ry, 0.62f * id.skull_ry + 1.8f * g + id.jaw_protrusion);
  const float extent_z = id.skull_rz + id.nose_length;
  if (extent_x > cx - 0.5f || extent_y > cy - 0.5f || extent_z > cz - 0.5f)
    throw Error("generate_phantom: phantom out of bounds (geometry exceeds grid)");
  if (id.brain_rx + th >= id.skull_rx || id.brain_ry + th >= id.skull_ry ||
      id.brain_rz + th >= id.skull_rz)
    throw Error("generate_phantom: phantom out of bounds (brain not inside skull)");

  PhantomOutput out;
  out.volume = make_volume(dims);
  out.labels.dims = dims;
  out.labels.labels.assign(static_cast<std::size_t>(volume_of(dims)),
                           static_cast<std::uint8_t>(Region::background));
  Writer w{&out.volume, &out.labels};

  const float nose_y = cy - 0.10f * id.skull_ry;
  const float nose_z0 = cz + 0.88f * id.skull_rz;
  const float eye_x = 0.42f * id.skull_rx;
  const float eye_y = cy - 0.38f * id.skull_ry;
  const float eye_z = cz + 0.82f * id.skull_rz;
  const float jaw_y = cy + 0.62f * id.skull_ry;
  const float jaw_z = cz + 0.55f * id.skull_rz;

  std::int64_t idx = 0;
  for (int i = 0; i < dims[0]; ++i)
    for (int j = 0; j < dims[1]; ++j)
      for (int k = 0; k < dims[2]; ++k, ++idx) {
        const float dx = i - cx;
        const float dy = j - cy;
        const float dz = k - cz;

        // Skull shell and the dark gap inside it.
        const float q_out = ellipsoid_q(dx, dy, dz, id.skull_rx, id.skull_ry, id.skull_rz);
        if (q_out <= 1.0f) {
          const float q_in = ellipsoid_q(dx, dy, dz, id.skull_rx - th, id.skull_ry - th,
                                         id.skull_rz - th);
          if (q_in > 1.0f)
            w.set(idx, kSkullIntensity, Region::skull);
          else
            w.set(idx, kCsfIntensity, Region::background);
        }

        // Nose: tapered wedge protruding from the front pole.
        const float dzn = k - nose_z0;
        if (dzn >= 0.0f && dzn <= id.nose_length) {
          const float taper = 1.0f - dzn / (id.nose_length + 1.0f);
          const float half = id.nose_width * taper + 0.5f;
          if (std::abs(i - cx) <= half && std::abs(j - nose_y) <= 1.2f * half)
            w.set(idx, kFaceIntensity, Region::face);
        }

        // Eye sockets: dark pits carved into the upper front shell.
        for (int side = -1; side <= 1; side += 2) {
          const float qe = ellipsoid_q(dx - side * eye_x, j - eye_y, k - eye_z, 1.6f * g,
                                       1.6f * g, 1.2f * g + id.eye_socket_depth);
          if (qe <= 1.0f) w.set(idx, kEyeSocketIntensity, Region::face);
        }

        // Jaw: bump at the lower front.
        const float qj = ellipsoid_q(dx, j - jaw_y, k - jaw_z, 0.30f * id.skull_rx,
                                     1.8f * g + id.jaw_protrusion, 2.2f * g + id.jaw_protrusion);
        if (qj <= 1.0f) w.set(idx, kFaceIntensity, Region::face);

        // Ears: bumps at the lateral poles.
        for (int side = -1; side <= 1; side += 2) {
          const float qe = ellipsoid_q(dx - side * id.skull_rx, dy, dz, ear_r,
                                       2.0f * g * id.ear_scale, 2.0f * g * id.ear_scale);
          if (qe <= 1.0f) w.set(idx, kEarIntensity, Region::face);
        }

        // Brain last so nothing overwrites it.
        const float qb = ellipsoid_q(dx, dy, dz, id.brain_rx, id.brain_ry, id.brain_rz);
        if (qb <= 1.0f) {
          Region r;
          float intensity;
          if (qb <= 0.25f) {
            r = Region::sub1;
            intensity = kSubregionIntensity[0];
          } else if (qb <= 0.55f) {
            r = Region::sub2;
            intensity = kSubregionIntensity[1];
          } else if (dy <= 0.0f) {
            r = Region::sub3;
            intensity = kSubregionIntensity[2];
          } else {
            r = Region::sub4;
            intensity = kSubregionIntensity[3];
          }
          w.set(idx, intensity, r);
        }
      }

  out.brain_mask = ground_truth_mask(out.labels);

  if (noise_sigma > 0.0f) {
    Rng rng(scan_noise_seed);
    for (auto& v : out.volume.voxels) {
      v = static_cast<float>(v + noise_sigma * rng.normal());
      v = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return out;
}

BinaryMask ground_truth_mask(const RegionLabels& labels) {
  BinaryMask m = make_mask(labels.dims);
  for (std::size_t i = 0; i < labels.labels.size(); ++i)
    m.bits[i] = labels.labels[i] >= kFirstBrainRegion ? 1 : 0;
  return m;
}

}  // namespace deid
