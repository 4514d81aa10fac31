#include <doctest.h>

#include <set>

#include "deid/phantom.hpp"

using namespace deid;

namespace {
const Dims3 kDims{32, 32, 32};
}

TEST_CASE("sample_identity: same rng seed gives identical identities") {
  const auto ranges = IdentityRanges::for_dims(kDims);
  Rng a(42), b(42);
  const auto ia = sample_identity(a, ranges);
  const auto ib = sample_identity(b, ranges);
  CHECK(ia.skull_rx == ib.skull_rx);
  CHECK(ia.nose_length == ib.nose_length);
  CHECK(ia.brain_rz == ib.brain_rz);
  CHECK(ia.seed == ib.seed);
}

TEST_CASE("sample_identity: 1000 samples stay inside the declared ranges") {
  const auto r = IdentityRanges::for_dims(kDims);
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto id = sample_identity(rng, r);
    CHECK(id.skull_rx >= r.skull_rx_min);
    CHECK(id.skull_rx <= r.skull_rx_max);
    CHECK(id.skull_ry >= r.skull_ry_min);
    CHECK(id.skull_ry <= r.skull_ry_max);
    CHECK(id.skull_rz >= r.skull_rz_min);
    CHECK(id.skull_rz <= r.skull_rz_max);
    CHECK(id.nose_length >= r.nose_length_min);
    CHECK(id.nose_length <= r.nose_length_max);
    CHECK(id.nose_width >= r.nose_width_min);
    CHECK(id.nose_width <= r.nose_width_max);
    CHECK(id.eye_socket_depth >= r.eye_depth_min);
    CHECK(id.eye_socket_depth <= r.eye_depth_max);
    CHECK(id.jaw_protrusion >= r.jaw_min);
    CHECK(id.jaw_protrusion <= r.jaw_max);
    CHECK(id.ear_scale >= r.ear_min);
    CHECK(id.ear_scale <= r.ear_max);
    CHECK(id.brain_rx >= r.brain_rx_min);
    CHECK(id.brain_rx <= r.brain_rx_max);
    // Brain stays strictly inside the skull by range construction.
    CHECK(id.brain_rx + r.shell_thickness < id.skull_rx);
    CHECK(id.brain_ry + r.shell_thickness < id.skull_ry);
    CHECK(id.brain_rz + r.shell_thickness < id.skull_rz);
  }
}

TEST_CASE("sample_identity: different seeds differ in at least one parameter") {
  const auto ranges = IdentityRanges::for_dims(kDims);
  Rng a(1), b(2);
  const auto ia = sample_identity(a, ranges);
  const auto ib = sample_identity(b, ranges);
  const bool differs = ia.skull_rx != ib.skull_rx || ia.skull_ry != ib.skull_ry ||
                       ia.nose_length != ib.nose_length || ia.jaw_protrusion != ib.jaw_protrusion;
  CHECK(differs);
}

TEST_CASE("generate_phantom: labels partition the volume and match the mask") {
  const auto ranges = IdentityRanges::for_dims(kDims);
  Rng rng(3);
  const auto id = sample_identity(rng, ranges);
  const auto out = generate_phantom(id, kDims, 11, 0.015f);
  REQUIRE(out.labels.labels.size() == out.volume.voxels.size());
  for (auto l : out.labels.labels) CHECK(l < kNumRegions);
  for (std::size_t i = 0; i < out.labels.labels.size(); ++i) {
    const bool is_brain = out.labels.labels[i] >= kFirstBrainRegion;
    CHECK(static_cast<bool>(out.brain_mask.bits[i]) == is_brain);
  }
  // All four subregions are present.
  std::set<int> seen;
  for (auto l : out.labels.labels) seen.insert(l);
  for (int c = 4; c < 8; ++c) CHECK(seen.count(c) == 1);
}

TEST_CASE("generate_phantom: noise seeds change intensities but not structure") {
  const auto ranges = IdentityRanges::for_dims(kDims);
  Rng rng(4);
  const auto id = sample_identity(rng, ranges);
  const auto a = generate_phantom(id, kDims, 100, 0.015f);
  const auto b = generate_phantom(id, kDims, 200, 0.015f);
  CHECK(a.brain_mask.bits == b.brain_mask.bits);
  CHECK(a.labels.labels == b.labels.labels);
  CHECK(dice_overlap(a.brain_mask, b.brain_mask) == 1.0);
  // Brain voxels differ only by bounded noise.
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.volume.voxels.size(); ++i)
    if (a.brain_mask.bits[i])
      max_diff = std::max(max_diff, std::abs(static_cast<double>(a.volume.voxels[i]) -
                                             static_cast<double>(b.volume.voxels[i])));
  CHECK(max_diff > 0.0);
  CHECK(max_diff < 0.2);
}

TEST_CASE("generate_phantom: zero sigma and equal seeds are bit-identical") {
  const auto ranges = IdentityRanges::for_dims(kDims);
  Rng rng(5);
  const auto id = sample_identity(rng, ranges);
  const auto a = generate_phantom(id, kDims, 42, 0.0f);
  const auto b = generate_phantom(id, kDims, 42, 0.0f);
  CHECK(a.volume.voxels == b.volume.voxels);
}

TEST_CASE("generate_phantom: nose length changes touch only face-labeled voxels") {
  const auto ranges = IdentityRanges::for_dims(kDims);
  Rng rng(6);
  auto id_a = sample_identity(rng, ranges);
  auto id_b = id_a;
  id_b.nose_length = id_a.nose_length < 3.0f ? id_a.nose_length + 1.0f : id_a.nose_length - 1.0f;
  const auto a = generate_phantom(id_a, kDims, 0, 0.0f);
  const auto b = generate_phantom(id_b, kDims, 0, 0.0f);
  const auto face = static_cast<std::uint8_t>(Region::face);
  for (std::size_t i = 0; i < a.volume.voxels.size(); ++i) {
    if (a.volume.voxels[i] != b.volume.voxels[i]) {
      const bool in_face = a.labels.labels[i] == face || b.labels.labels[i] == face;
      CHECK(in_face);
    }
  }
}

TEST_CASE("generate_phantom: brain voxels are a function of brain parameters only") {
  const auto ranges = IdentityRanges::for_dims(kDims);
  Rng rng(8);
  auto id_a = sample_identity(rng, ranges);
  auto id_b = id_a;
  id_b.nose_length = ranges.nose_length_min;
  id_b.nose_width = ranges.nose_width_max;
  id_b.jaw_protrusion = ranges.jaw_max;
  id_b.eye_socket_depth = ranges.eye_depth_min;
  id_b.ear_scale = ranges.ear_min;
  id_b.skull_rx = ranges.skull_rx_max;
  id_b.skull_ry = ranges.skull_ry_max;
  id_b.skull_rz = ranges.skull_rz_max;
  const auto a = generate_phantom(id_a, kDims, 0, 0.0f);
  const auto b = generate_phantom(id_b, kDims, 0, 0.0f);
  REQUIRE(a.brain_mask.bits == b.brain_mask.bits);
  for (std::size_t i = 0; i < a.volume.voxels.size(); ++i)
    if (a.brain_mask.bits[i]) CHECK(a.volume.voxels[i] == b.volume.voxels[i]);
}

TEST_CASE("generate_phantom: oversized geometry is rejected") {
  const auto ranges = IdentityRanges::for_dims(kDims);
  Rng rng(9);
  auto id = sample_identity(rng, ranges);
  id.skull_rz = 14.0f;
  id.nose_length = 6.0f;
  CHECK_THROWS_WITH_AS(generate_phantom(id, kDims, 0, 0.0f), doctest::Contains("out of bounds"),
                       Error);
}

TEST_CASE("generate_phantom: dims below 16 are rejected") {
  const auto ranges = IdentityRanges::for_dims(kDims);
  Rng rng(10);
  const auto id = sample_identity(rng, ranges);
  CHECK_THROWS_AS(generate_phantom(id, {8, 32, 32}, 0, 0.0f), Error);
}

TEST_CASE("generate_phantom: works at 16 cubed with scaled ranges") {
  const Dims3 dims{16, 16, 16};
  const auto ranges = IdentityRanges::for_dims(dims);
  Rng rng(11);
  const auto id = sample_identity(rng, ranges);
  const auto out = generate_phantom(id, dims, 1, 0.01f);
  CHECK(out.brain_mask.count() > 0);
}
