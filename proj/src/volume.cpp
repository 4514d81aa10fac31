#include "deid/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace deid {

namespace {

void require_same_dims(const Dims3& a, const Dims3& b, const char* op) {
  for (int i = 0; i < 3; ++i)
    if (a[i] != b[i])
      throw DimensionError(std::string(op) + ": dims mismatch on axis " + std::to_string(i) +
                           " (" + std::to_string(a[i]) + " vs " + std::to_string(b[i]) + ")");
}

}  // namespace

std::int64_t BinaryMask::count() const {
  std::int64_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

Volume make_volume(Dims3 dims, float fill) {
  Volume v;
  v.dims = dims;
  v.voxels.assign(static_cast<std::size_t>(volume_of(dims)), fill);
  return v;
}

BinaryMask make_mask(Dims3 dims, bool fill) {
  BinaryMask m;
  m.dims = dims;
  m.bits.assign(static_cast<std::size_t>(volume_of(dims)), fill ? 1 : 0);
  return m;
}

BinaryMask complement(const BinaryMask& m) {
  BinaryMask out = m;
  for (auto& b : out.bits) b = b ? 0 : 1;
  return out;
}

Volume apply_mask(const Volume& v, const BinaryMask& m, bool invert) {
  require_same_dims(v.dims, m.dims, "apply_mask");
  Volume out = v;
  for (std::size_t i = 0; i < out.voxels.size(); ++i) {
    const bool keep = invert ? m.bits[i] == 0 : m.bits[i] != 0;
    if (!keep) out.voxels[i] = 0.0f;
  }
  return out;
}

float otsu_threshold(const std::vector<float>& values) {
  constexpr int kBins = 256;
  std::array<std::int64_t, kBins> hist{};
  for (float v : values) {
    int b = static_cast<int>(v * (kBins - 1) + 0.5f);
    b = std::clamp(b, 0, kBins - 1);
    ++hist[b];
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * static_cast<double>(hist[b]);

  double best_sigma = -1.0;
  int best_bin = -1;
  double w0 = 0.0, sum0 = 0.0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += static_cast<double>(hist[b]);
    sum0 += b * static_cast<double>(hist[b]);
    if (w0 == 0.0) continue;
    const double w1 = total - w0;
    if (w1 == 0.0) break;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double sigma = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (sigma > best_sigma) {
      best_sigma = sigma;
      best_bin = b;
    }
  }
  if (best_bin < 0) throw Error("otsu: empty volume (no intensity split exists)");
  return (static_cast<float>(best_bin) + 0.5f) / (kBins - 1);
}

BinaryMask dilate(const BinaryMask& m, int r) {
  if (r < 0) throw Error("dilate: radius must be >= 0");
  BinaryMask cur = m;
  const int d = m.dims[0], h = m.dims[1], w = m.dims[2];
  for (int pass = 0; pass < r; ++pass) {
    BinaryMask next = cur;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < h; ++j)
        for (int k = 0; k < w; ++k) {
          const std::int64_t idx = (static_cast<std::int64_t>(i) * h + j) * w + k;
          if (cur.bits[idx]) continue;
          const bool on = (i > 0 && cur.bits[idx - static_cast<std::int64_t>(h) * w]) ||
                          (i + 1 < d && cur.bits[idx + static_cast<std::int64_t>(h) * w]) ||
                          (j > 0 && cur.bits[idx - w]) || (j + 1 < h && cur.bits[idx + w]) ||
                          (k > 0 && cur.bits[idx - 1]) || (k + 1 < w && cur.bits[idx + 1]);
          if (on) next.bits[idx] = 1;
        }
    cur = std::move(next);
  }
  return cur;
}

BinaryMask erode(const BinaryMask& m, int r) {
  if (r < 0) throw Error("erode: radius must be >= 0");
  BinaryMask cur = m;
  const int d = m.dims[0], h = m.dims[1], w = m.dims[2];
  for (int pass = 0; pass < r; ++pass) {
    BinaryMask next = cur;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < h; ++j)
        for (int k = 0; k < w; ++k) {
          const std::int64_t idx = (static_cast<std::int64_t>(i) * h + j) * w + k;
          if (!cur.bits[idx]) continue;
          const bool keep = i > 0 && cur.bits[idx - static_cast<std::int64_t>(h) * w] &&
                            i + 1 < d && cur.bits[idx + static_cast<std::int64_t>(h) * w] &&
                            j > 0 && cur.bits[idx - w] && j + 1 < h && cur.bits[idx + w] &&
                            k > 0 && cur.bits[idx - 1] && k + 1 < w && cur.bits[idx + 1];
          if (!keep) next.bits[idx] = 0;
        }
    cur = std::move(next);
  }
  return cur;
}

std::pair<BinaryMask, std::int64_t> largest_component(const BinaryMask& m) {
  const int d = m.dims[0], h = m.dims[1], w = m.dims[2];
  const std::int64_t n = m.size();
  std::vector<std::int32_t> label(static_cast<std::size_t>(n), -1);
  std::vector<std::int64_t> stack;
  std::int32_t n_labels = 0;
  std::int64_t best_count = 0;
  std::int32_t best_label = -1;

  for (std::int64_t seed = 0; seed < n; ++seed) {
    if (!m.bits[seed] || label[seed] >= 0) continue;
    const std::int32_t lab = n_labels++;
    std::int64_t count = 0;
    stack.push_back(seed);
    label[seed] = lab;
    while (!stack.empty()) {
      const std::int64_t idx = stack.back();
      stack.pop_back();
      ++count;
      const int i = static_cast<int>(idx / (static_cast<std::int64_t>(h) * w));
      const int j = static_cast<int>((idx / w) % h);
      const int k = static_cast<int>(idx % w);
      const std::int64_t nbrs[6] = {
          i > 0 ? idx - static_cast<std::int64_t>(h) * w : -1,
          i + 1 < d ? idx + static_cast<std::int64_t>(h) * w : -1,
          j > 0 ? idx - w : -1,
          j + 1 < h ? idx + w : -1,
          k > 0 ? idx - 1 : -1,
          k + 1 < w ? idx + 1 : -1};
      for (std::int64_t nb : nbrs) {
        if (nb < 0 || !m.bits[nb] || label[nb] >= 0) continue;
        label[nb] = lab;
        stack.push_back(nb);
      }
    }
    if (count > best_count) {
      best_count = count;
      best_label = lab;
    }
  }

  BinaryMask out = make_mask(m.dims);
  if (best_label >= 0)
    for (std::int64_t i = 0; i < n; ++i) out.bits[i] = label[i] == best_label ? 1 : 0;
  return {out, best_count};
}

BinaryMask extract_brain_mask(const Volume& v, const MaskExtractParams& p) {
  float lo = std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::lowest();
  for (float x : v.voxels) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (!(hi > lo)) throw Error("extract_brain_mask: empty volume (constant intensities)");

  const float threshold = p.threshold_mode == MaskExtractParams::Threshold::otsu
                              ? otsu_threshold(v.voxels)
                              : p.fixed_threshold;

  BinaryMask fg = make_mask(v.dims);
  std::int64_t fg_count = 0;
  for (std::size_t i = 0; i < v.voxels.size(); ++i)
    if (v.voxels[i] > threshold) {
      fg.bits[i] = 1;
      ++fg_count;
    }
  if (fg_count == 0) throw Error("extract_brain_mask: empty volume (nothing above threshold)");

  auto [comp, comp_count] = largest_component(fg);
  if (comp_count <
      static_cast<std::int64_t>(p.min_component_fraction * static_cast<float>(fg_count)))
    throw Error("extract_brain_mask: largest component below min_component_fraction");

  BinaryMask opened = dilate(erode(comp, p.erosion_radius), p.dilation_radius);
  auto [final_mask, final_count] = largest_component(opened);
  if (final_count == 0) throw Error("extract_brain_mask: empty volume (morphology removed all voxels)");
  return final_mask;
}

double dice_overlap(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a.dims, b.dims, "dice_overlap");
  std::int64_t inter = 0, ca = 0, cb = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool ba = a.bits[i] != 0;
    const bool bb = b.bits[i] != 0;
    inter += (ba && bb) ? 1 : 0;
    ca += ba ? 1 : 0;
    cb += bb ? 1 : 0;
  }
  if (ca + cb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
}

void write_volume(const Volume& v, const std::string& path) {
  if (static_cast<std::int64_t>(v.voxels.size()) != v.size())
    throw DimensionError("write_volume: voxel count does not match dims");
  for (float x : v.voxels)
    if (!std::isfinite(x) || x < 0.0f || x > 1.0f)
      throw NumericError("write_volume: intensities must be finite and in [0,1]");
  nlohmann::json header;
  header["dims"] = v.dims;
  header["spacing_mm"] = v.spacing_mm;
  header["dtype"] = "f32le";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_volume: cannot open '" + path + "' for writing");
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(v.voxels.data()),
            static_cast<std::streamsize>(v.voxels.size() * 4));
  if (!out) throw Error("write_volume: write failed for '" + path + "'");
}

namespace {

Volume read_native(std::ifstream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("read_volume: missing header line at byte offset 0 in '" + path + "'");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("read_volume: bad header JSON at byte offset 0 in '" + path +
                      "': " + e.what());
  }
  if (header.value("dtype", "") != "f32le")
    throw FormatError("read_volume: unsupported dtype '" + header.value("dtype", "") + "' in '" +
                      path + "'");
  const auto dims = header.at("dims").get<std::vector<int>>();
  if (dims.size() != 3)
    throw FormatError("read_volume: unsupported dimensionality (" + std::to_string(dims.size()) +
                      "-D) in '" + path + "'");
  Volume v;
  v.dims = {dims[0], dims[1], dims[2]};
  if (header.contains("spacing_mm")) {
    const auto sp = header.at("spacing_mm").get<std::vector<float>>();
    if (sp.size() == 3) v.spacing_mm = {sp[0], sp[1], sp[2]};
  }
  const std::int64_t count = v.size();
  v.voxels.resize(static_cast<std::size_t>(count));
  const std::int64_t payload_start = static_cast<std::int64_t>(line.size()) + 1;
  in.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(count * 4));
  if (in.gcount() != count * 4)
    throw FormatError("read_volume: truncated payload at byte offset " +
                      std::to_string(payload_start + in.gcount()) + " in '" + path + "'");
  for (float x : v.voxels)
    if (!std::isfinite(x) || x < 0.0f || x > 1.0f)
      throw NumericError("read_volume: intensities outside [0,1] in '" + path + "'");
  return v;
}

// NIfTI-1 header fields used by the reader (348-byte header).
constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiDimOffset = 40;
constexpr int kNiftiDatatypeOffset = 70;
constexpr int kNiftiPixdimOffset = 76;
constexpr int kNiftiVoxOffsetOffset = 108;
constexpr int kNiftiMagicOffset = 344;
constexpr std::int16_t kNiftiTypeInt16 = 4;
constexpr std::int16_t kNiftiTypeFloat32 = 16;

template <typename T>
T read_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

Volume read_nifti(std::ifstream& in, const std::string& path) {
  std::vector<unsigned char> header(kNiftiHeaderSize);
  in.read(reinterpret_cast<char*>(header.data()), kNiftiHeaderSize);
  if (in.gcount() != kNiftiHeaderSize)
    throw FormatError("read_volume: truncated NIfTI header at byte offset " +
                      std::to_string(in.gcount()) + " in '" + path + "'");
  if (std::memcmp(header.data() + kNiftiMagicOffset, "n+1\0", 4) != 0)
    throw FormatError("read_volume: bad magic at byte offset " +
                      std::to_string(kNiftiMagicOffset) + " in '" + path + "'");

  const auto ndim = read_le<std::int16_t>(header.data() + kNiftiDimOffset);
  if (ndim != 3)
    throw FormatError("read_volume: unsupported dimensionality (dim[0]=" + std::to_string(ndim) +
                      ") at byte offset " + std::to_string(kNiftiDimOffset) + " in '" + path +
                      "'");
  const int nx = read_le<std::int16_t>(header.data() + kNiftiDimOffset + 2);
  const int ny = read_le<std::int16_t>(header.data() + kNiftiDimOffset + 4);
  const int nz = read_le<std::int16_t>(header.data() + kNiftiDimOffset + 6);
  if (nx <= 0 || ny <= 0 || nz <= 0)
    throw FormatError("read_volume: non-positive NIfTI dims at byte offset " +
                      std::to_string(kNiftiDimOffset + 2) + " in '" + path + "'");
  const auto datatype = read_le<std::int16_t>(header.data() + kNiftiDatatypeOffset);
  if (datatype != kNiftiTypeInt16 && datatype != kNiftiTypeFloat32)
    throw FormatError("read_volume: unsupported NIfTI datatype " + std::to_string(datatype) +
                      " at byte offset " + std::to_string(kNiftiDatatypeOffset) + " in '" + path +
                      "'");
  float px = read_le<float>(header.data() + kNiftiPixdimOffset + 4);
  float py = read_le<float>(header.data() + kNiftiPixdimOffset + 8);
  float pz = read_le<float>(header.data() + kNiftiPixdimOffset + 12);
  if (!(px > 0.0f)) px = 1.0f;
  if (!(py > 0.0f)) py = 1.0f;
  if (!(pz > 0.0f)) pz = 1.0f;
  float vox_offset = read_le<float>(header.data() + kNiftiVoxOffsetOffset);
  if (vox_offset < static_cast<float>(kNiftiHeaderSize)) vox_offset = 352.0f;

  const std::int64_t count = static_cast<std::int64_t>(nx) * ny * nz;
  in.seekg(static_cast<std::streamoff>(vox_offset), std::ios::beg);

  std::vector<double> raw(static_cast<std::size_t>(count));
  if (datatype == kNiftiTypeFloat32) {
    std::vector<float> buf(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
    if (in.gcount() != count * 4)
      throw FormatError("read_volume: truncated NIfTI payload at byte offset " +
                        std::to_string(static_cast<std::int64_t>(vox_offset) + in.gcount()) +
                        " in '" + path + "'");
    for (std::int64_t i = 0; i < count; ++i) raw[i] = buf[i];
  } else {
    std::vector<std::int16_t> buf(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 2));
    if (in.gcount() != count * 2)
      throw FormatError("read_volume: truncated NIfTI payload at byte offset " +
                        std::to_string(static_cast<std::int64_t>(vox_offset) + in.gcount()) +
                        " in '" + path + "'");
    for (std::int64_t i = 0; i < count; ++i) raw[i] = buf[i];
  }

  double lo = raw[0], hi = raw[0];
  for (double x : raw) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double range = hi > lo ? hi - lo : 1.0;

  // NIfTI stores x fastest; mapping dims to (z,y,x) keeps the memory order.
  Volume v;
  v.dims = {nz, ny, nx};
  v.spacing_mm = {pz, py, px};
  v.voxels.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i)
    v.voxels[i] = hi > lo ? static_cast<float>((raw[i] - lo) / range) : 0.0f;
  return v;
}

}  // namespace

Volume read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_volume: cannot open '" + path + "'");
  const int first = in.peek();
  if (first == '{') return read_native(in, path);
  return read_nifti(in, path);
}

Volume mask_to_volume(const BinaryMask& m) {
  Volume v = make_volume(m.dims);
  for (std::size_t i = 0; i < m.bits.size(); ++i) v.voxels[i] = m.bits[i] ? 1.0f : 0.0f;
  return v;
}

BinaryMask volume_to_mask(const Volume& v, float threshold) {
  BinaryMask m = make_mask(v.dims);
  for (std::size_t i = 0; i < v.voxels.size(); ++i) m.bits[i] = v.voxels[i] > threshold ? 1 : 0;
  return m;
}

}  // namespace deid
