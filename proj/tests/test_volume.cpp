#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "deid/phantom.hpp"
#include "deid/volume.hpp"

using namespace deid;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const char* name) { return (fs::temp_directory_path() / name).string(); }

Volume random_volume(Rng& rng, Dims3 dims) {
  Volume v = make_volume(dims);
  v.spacing_mm = {0.5f + static_cast<float>(rng.uniform()),
                  0.5f + static_cast<float>(rng.uniform()),
                  0.5f + static_cast<float>(rng.uniform())};
  for (auto& x : v.voxels) x = static_cast<float>(rng.uniform());
  return v;
}

BinaryMask random_mask(Rng& rng, Dims3 dims) {
  BinaryMask m = make_mask(dims);
  for (auto& b : m.bits) b = rng.uniform() < 0.5 ? 1 : 0;
  return m;
}

// Minimal NIfTI-1 writer used only by these tests.
void write_test_nifti(const std::string& path, int nx, int ny, int nz, std::int16_t datatype,
                      const void* payload, std::size_t payload_bytes, const char* magic = "n+1",
                      std::int16_t ndim = 3) {
  std::vector<unsigned char> header(352, 0);
  const std::int32_t sizeof_hdr = 348;
  std::memcpy(header.data(), &sizeof_hdr, 4);
  std::int16_t dim[8] = {ndim, static_cast<std::int16_t>(nx), static_cast<std::int16_t>(ny),
                         static_cast<std::int16_t>(nz), 1, 1, 1, 1};
  std::memcpy(header.data() + 40, dim, sizeof(dim));
  std::memcpy(header.data() + 70, &datatype, 2);
  const std::int16_t bitpix = datatype == 4 ? 16 : 32;
  std::memcpy(header.data() + 72, &bitpix, 2);
  float pixdim[8] = {1, 2.0f, 3.0f, 4.0f, 0, 0, 0, 0};
  std::memcpy(header.data() + 76, pixdim, sizeof(pixdim));
  const float vox_offset = 352.0f;
  std::memcpy(header.data() + 108, &vox_offset, 4);
  std::memcpy(header.data() + 344, magic, 4);

  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(header.data()), 352);
  out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
}

}  // namespace

TEST_CASE("native container: write-then-read round trip is bit-exact") {
  Rng rng(100);
  const std::string path = tmp_path("deid_vol_roundtrip.vol");
  for (int trial = 0; trial < 100; ++trial) {
    Dims3 dims{static_cast<int>(2 + rng.uniform_int(9)), static_cast<int>(2 + rng.uniform_int(9)),
               static_cast<int>(2 + rng.uniform_int(9))};
    Volume v = random_volume(rng, dims);
    write_volume(v, path);
    Volume r = read_volume(path);
    REQUIRE(r.dims == v.dims);
    CHECK(std::memcmp(r.voxels.data(), v.voxels.data(), v.voxels.size() * 4) == 0);
    CHECK(r.spacing_mm == v.spacing_mm);
  }
  fs::remove(path);
}

TEST_CASE("native container: 4x4x4 ramp volume reads back identically") {
  const std::string path = tmp_path("deid_vol_ramp.vol");
  Volume v = make_volume({4, 4, 4});
  for (int i = 0; i < 64; ++i) v.voxels[i] = static_cast<float>(i) / 63.0f;
  write_volume(v, path);
  Volume r = read_volume(path);
  CHECK(std::memcmp(r.voxels.data(), v.voxels.data(), 64 * 4) == 0);
  fs::remove(path);
}

TEST_CASE("nifti: int16 values {0,1000} rescale to {0,1}") {
  const std::string path = tmp_path("deid_nifti_i16.nii");
  std::vector<std::int16_t> payload(8, 0);
  payload[3] = 1000;
  payload[5] = 1000;
  write_test_nifti(path, 2, 2, 2, 4, payload.data(), payload.size() * 2);
  Volume v = read_volume(path);
  CHECK(v.dims == Dims3{2, 2, 2});
  CHECK(v.voxels[3] == 1.0f);
  CHECK(v.voxels[5] == 1.0f);
  CHECK(v.voxels[0] == 0.0f);
  // NIfTI x-fastest order maps spacing to (pz, py, px).
  CHECK(v.spacing_mm == std::array<float, 3>{4.0f, 3.0f, 2.0f});
  fs::remove(path);
}

TEST_CASE("nifti: float32 payload is min-max rescaled to [0,1]") {
  const std::string path = tmp_path("deid_nifti_f32.nii");
  std::vector<float> payload = {-2.0f, 0.0f, 2.0f, 6.0f, -2.0f, 6.0f, 0.0f, 2.0f};
  write_test_nifti(path, 2, 2, 2, 16, payload.data(), payload.size() * 4);
  Volume v = read_volume(path);
  CHECK(v.voxels[0] == doctest::Approx(0.0f));
  CHECK(v.voxels[3] == doctest::Approx(1.0f));
  CHECK(v.voxels[1] == doctest::Approx(0.25f));
  fs::remove(path);
}

TEST_CASE("nifti: 4-D header is rejected as unsupported dimensionality") {
  const std::string path = tmp_path("deid_nifti_4d.nii");
  std::vector<float> payload(8, 0.0f);
  write_test_nifti(path, 2, 2, 2, 16, payload.data(), payload.size() * 4, "n+1", 4);
  CHECK_THROWS_WITH_AS(read_volume(path), doctest::Contains("unsupported dimensionality"),
                       FormatError);
  fs::remove(path);
}

TEST_CASE("nifti: bad magic is reported with its byte offset") {
  const std::string path = tmp_path("deid_nifti_magic.nii");
  std::vector<float> payload(8, 0.0f);
  write_test_nifti(path, 2, 2, 2, 16, payload.data(), payload.size() * 4, "nix");
  CHECK_THROWS_WITH_AS(read_volume(path), doctest::Contains("344"), FormatError);
  fs::remove(path);
}

TEST_CASE("nifti: truncated payload is a format error with byte offset") {
  const std::string path = tmp_path("deid_nifti_trunc.nii");
  std::vector<float> payload(3, 0.5f);  // needs 8
  write_test_nifti(path, 2, 2, 2, 16, payload.data(), payload.size() * 4);
  CHECK_THROWS_WITH_AS(read_volume(path), doctest::Contains("byte offset"), FormatError);
  fs::remove(path);
}

TEST_CASE("apply_mask: complement halves add back to the original exactly") {
  Rng rng(200);
  for (int trial = 0; trial < 25; ++trial) {
    Dims3 dims{5, 6, 7};
    Volume v = random_volume(rng, dims);
    BinaryMask m = random_mask(rng, dims);
    Volume a = apply_mask(v, m, false);
    Volume b = apply_mask(v, m, true);
    for (std::size_t i = 0; i < v.voxels.size(); ++i) CHECK(a.voxels[i] + b.voxels[i] == v.voxels[i]);
  }
}

TEST_CASE("apply_mask: all-ones mask is identity, inverted it annihilates") {
  Rng rng(201);
  Volume v = random_volume(rng, {4, 4, 4});
  BinaryMask ones = make_mask({4, 4, 4}, true);
  Volume same = apply_mask(v, ones, false);
  CHECK(same.voxels == v.voxels);
  Volume zero = apply_mask(v, ones, true);
  for (float x : zero.voxels) CHECK(x == 0.0f);
}

TEST_CASE("apply_mask: dims mismatch raises a dimension error") {
  Volume v = make_volume({4, 4, 4});
  BinaryMask m = make_mask({4, 4, 5});
  CHECK_THROWS_WITH_AS(apply_mask(v, m, false), doctest::Contains("axis 2"), DimensionError);
}

TEST_CASE("mask: double complement is identity") {
  Rng rng(202);
  BinaryMask m = random_mask(rng, {5, 5, 5});
  CHECK(complement(complement(m)).bits == m.bits);
}

TEST_CASE("morphology: single voxel dilated by 1 is the 7-voxel plus shape") {
  BinaryMask m = make_mask({5, 5, 5});
  m.bits[(2 * 5 + 2) * 5 + 2] = 1;
  BinaryMask d = dilate(m, 1);
  CHECK(d.count() == 7);
  auto at = [&](int i, int j, int k) { return d.bits[(i * 5 + j) * 5 + k]; };
  CHECK(at(2, 2, 2));
  CHECK(at(1, 2, 2));
  CHECK(at(3, 2, 2));
  CHECK(at(2, 1, 2));
  CHECK(at(2, 3, 2));
  CHECK(at(2, 2, 1));
  CHECK(at(2, 2, 3));
}

TEST_CASE("morphology: dilating an empty mask stays empty, r=0 is identity") {
  BinaryMask empty = make_mask({4, 4, 4});
  CHECK(dilate(empty, 2).count() == 0);
  Rng rng(203);
  BinaryMask m = random_mask(rng, {4, 4, 4});
  CHECK(dilate(m, 0).bits == m.bits);
  CHECK(erode(m, 0).bits == m.bits);
}

TEST_CASE("morphology: closing covers a convex solid") {
  // Solid ball, radius 3, in a 11^3 grid.
  BinaryMask m = make_mask({11, 11, 11});
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j)
      for (int k = 0; k < 11; ++k) {
        const int di = i - 5, dj = j - 5, dk = k - 5;
        if (di * di + dj * dj + dk * dk <= 9) m.bits[(i * 11 + j) * 11 + k] = 1;
      }
  BinaryMask closed = erode(dilate(m, 1), 1);
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    if (m.bits[i]) CHECK(closed.bits[i] == 1);
}

TEST_CASE("otsu: bimodal histogram splits between the modes") {
  std::vector<float> values;
  for (int i = 0; i < 800; ++i) values.push_back(0.05f);
  for (int i = 0; i < 200; ++i) values.push_back(0.9f);
  const float t = otsu_threshold(values);
  CHECK(t > 0.05f);
  CHECK(t < 0.9f);
}

TEST_CASE("extract_brain_mask: phantom ground truth is recovered with Dice >= 0.95") {
  const Dims3 dims{32, 32, 32};
  const auto ranges = IdentityRanges::for_dims(dims);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const auto id = sample_identity(rng, ranges);
    const auto out = generate_phantom(id, dims, seed * 13, 0.015f);
    const BinaryMask mask = extract_brain_mask(out.volume);
    const double d = dice_overlap(mask, out.brain_mask);
    CHECK(d >= 0.95);

    // Idempotence in effect: re-extracting from the masked volume agrees.
    const Volume brain_only = apply_mask(out.volume, mask, false);
    const BinaryMask again = extract_brain_mask(brain_only);
    CHECK(dice_overlap(mask, again) >= 0.99);
  }
}

TEST_CASE("extract_brain_mask: result is a single 6-connected component") {
  const Dims3 dims{32, 32, 32};
  Rng rng(9);
  const auto id = sample_identity(rng, IdentityRanges::for_dims(dims));
  const auto out = generate_phantom(id, dims, 3, 0.015f);
  const BinaryMask mask = extract_brain_mask(out.volume);
  auto [largest, count] = largest_component(mask);
  CHECK(count == mask.count());
}

TEST_CASE("extract_brain_mask: all-zero volume raises an empty-volume error") {
  Volume v = make_volume({16, 16, 16});
  CHECK_THROWS_WITH_AS(extract_brain_mask(v), doctest::Contains("empty volume"), Error);
}

TEST_CASE("extract_brain_mask: keeps only the larger of two disjoint blobs") {
  Volume v = make_volume({24, 24, 24});
  auto put_ball = [&](int ci, int cj, int ck, int r) {
    for (int i = 0; i < 24; ++i)
      for (int j = 0; j < 24; ++j)
        for (int k = 0; k < 24; ++k) {
          const int di = i - ci, dj = j - cj, dk = k - ck;
          if (di * di + dj * dj + dk * dk <= r * r) v.at(i, j, k) = 0.9f;
        }
  };
  put_ball(8, 8, 8, 6);    // large
  put_ball(19, 19, 19, 2);  // small, disjoint
  const BinaryMask mask = extract_brain_mask(v);
  for (int i = 16; i < 24; ++i)
    for (int j = 16; j < 24; ++j)
      for (int k = 16; k < 24; ++k) CHECK(mask.bits[(i * 24 + j) * 24 + k] == 0);
  CHECK(mask.count() > 0);
}

TEST_CASE("write_volume: rejects out-of-range intensities") {
  Volume v = make_volume({2, 2, 2});
  v.voxels[0] = 1.5f;
  CHECK_THROWS_AS(write_volume(v, tmp_path("deid_bad.vol")), NumericError);
}
