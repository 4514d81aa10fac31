#include "deid/eval.hpp"

#include <algorithm>
#include <cmath>

namespace deid {

ProfileImage render_profile(const Volume& v) {
  ProfileImage img;
  img.h = v.dims[1];
  img.w = v.dims[2];
  img.pixels.assign(static_cast<std::size_t>(img.h) * img.w, 0.0f);
  for (int i = 0; i < v.dims[0]; ++i)
    for (int j = 0; j < v.dims[1]; ++j)
      for (int k = 0; k < v.dims[2]; ++k) {
        auto& px = img.pixels[static_cast<std::size_t>(j) * img.w + k];
        px = std::max(px, v.at(i, j, k));
      }
  return img;
}

Volume control_black(const Volume& v) { return make_volume(v.dims); }

Volume control_original(const Volume& v) { return v; }

EmbedderModel EmbedderModel::make(const EmbedderConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  EmbedderModel m;
  m.cfg = cfg;
  m.c1 = nn::Conv2dLayer::make(rng, 1, 16, 3);
  m.c2 = nn::Conv2dLayer::make(rng, 16, 32, 3);
  m.c3 = nn::Conv2dLayer::make(rng, 32, 64, 3);
  m.c4 = nn::Conv2dLayer::make(rng, 64, 64, 3);
  const int final_side = cfg.image_dim / 16;
  m.fc = nn::LinearLayer::make(rng, 64 * final_side * final_side, cfg.embed_dim);
  return m;
}

std::vector<nn::Param> EmbedderModel::params() const {
  std::vector<nn::Param> out;
  c1.params("c1", out);
  c2.params("c2", out);
  c3.params("c3", out);
  c4.params("c4", out);
  fc.params("fc", out);
  return out;
}

Tensorf embed_images(const EmbedderModel& m, const std::vector<const ProfileImage*>& images) {
  const int n = static_cast<int>(images.size());
  const int side = m.cfg.image_dim;
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(n) * side * side);
  for (const auto* img : images) {
    if (img->h != side || img->w != side)
      throw DimensionError("embed_images: image dims (" + std::to_string(img->h) + "," +
                           std::to_string(img->w) + ") do not match embedder input " +
                           std::to_string(side));
    data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  }
  auto x = Tensorf::from_data({n, 1, side, side}, std::move(data), false);
  auto h = ops::relu(m.c1.forward(x, 2, 1));
  h = ops::relu(m.c2.forward(h, 2, 1));
  h = ops::relu(m.c3.forward(h, 2, 1));
  h = ops::relu(m.c4.forward(h, 2, 1));
  const int final_side = side / 16;
  h = ops::reshape(h, {n, 64 * final_side * final_side});
  return ops::l2_normalize_rows(m.fc.forward(h));
}

std::vector<float> embed_image(const EmbedderModel& m, const ProfileImage& img) {
  return embed_images(m, {&img}).value();
}

EmbedderModel train_reid_embedder(const std::vector<std::vector<ProfileImage>>& subjects,
                                  const EmbedderConfig& cfg) {
  if (subjects.size() < 8)
    throw Error("train_reid_embedder: dataset error, need >= 8 subjects, got " +
                std::to_string(subjects.size()));
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].size() < 2)
      throw Error("train_reid_embedder: dataset error, subject " + std::to_string(i) +
                  " has fewer than 2 renderings");

  EmbedderModel m = EmbedderModel::make(cfg, cfg.seed);
  Rng rng(splitmix64_mix(cfg.seed ^ 0x7ea1f00dULL));
  auto params = m.params();
  Adam<float> opt(nn::values_of(params), {cfg.lr, 0.9, 0.999, 1e-8});

  const int n_subj = static_cast<int>(subjects.size());
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const ProfileImage*> anchors, positives, negatives;
    for (int b = 0; b < cfg.batch; ++b) {
      const int sa = static_cast<int>(rng.uniform_int(n_subj));
      int sn = static_cast<int>(rng.uniform_int(n_subj - 1));
      if (sn >= sa) ++sn;
      const auto& imgs = subjects[sa];
      const int ia = static_cast<int>(rng.uniform_int(imgs.size()));
      int ip = static_cast<int>(rng.uniform_int(imgs.size() - 1));
      if (ip >= ia) ++ip;
      const auto& neg_imgs = subjects[sn];
      const int in_idx = static_cast<int>(rng.uniform_int(neg_imgs.size()));
      anchors.push_back(&imgs[ia]);
      positives.push_back(&imgs[ip]);
      negatives.push_back(&neg_imgs[in_idx]);
    }
    auto ea = embed_images(m, anchors);
    auto ep = embed_images(m, positives);
    auto en = embed_images(m, negatives);
    auto loss = ops::triplet_margin_loss(ea, ep, en, cfg.margin);
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw NumericError("train_reid_embedder: non-finite loss");
    opt.zero_grad();
    loss.backward();
    opt.step();
    opt.zero_grad();
  }
  return m;
}

ReidAccuracy reid_accuracy(const EmbedderModel& m, const std::vector<ReidTrial>& trials,
                           int n_batches) {
  if (trials.empty()) throw Error("reid_accuracy: no trials");
  std::vector<int> correct(trials.size(), 0);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& trial = trials[i];
    if (trial.options.size() != 5)
      throw Error("reid_accuracy: trial " + std::to_string(i) + " does not have 5 options");
    const auto probe = embed_image(m, trial.probe);
    int best = 0;
    double best_dist = 1e300;
    for (int o = 0; o < 5; ++o) {
      const auto emb = embed_image(m, trial.options[o]);
      double d = 0.0;
      for (std::size_t c = 0; c < emb.size(); ++c) {
        const double diff = static_cast<double>(probe[c]) - static_cast<double>(emb[c]);
        d += diff * diff;
      }
      if (d < best_dist) {
        best_dist = d;
        best = o;
      }
    }
    correct[i] = best == trial.correct_index ? 1 : 0;
  }

  n_batches = std::max(1, std::min<int>(n_batches, static_cast<int>(trials.size())));
  const std::size_t per_batch = trials.size() / n_batches;
  std::vector<double> batch_acc;
  for (int b = 0; b < n_batches; ++b) {
    const std::size_t lo = b * per_batch;
    const std::size_t hi = b + 1 == n_batches ? trials.size() : lo + per_batch;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += correct[i];
    batch_acc.push_back(acc / static_cast<double>(hi - lo));
  }
  double mean = 0.0;
  for (double a : batch_acc) mean += a;
  mean /= batch_acc.size();
  double var = 0.0;
  for (double a : batch_acc) var += (a - mean) * (a - mean);
  var = batch_acc.size() > 1 ? var / (batch_acc.size() - 1) : 0.0;

  ReidAccuracy out;
  out.mean_pct = mean * 100.0;
  out.sd_pct = std::sqrt(var) * 100.0;
  out.trials = static_cast<int>(trials.size());
  return out;
}

DiceResult dice(const RegionLabels& a, const RegionLabels& b) {
  for (int axis = 0; axis < 3; ++axis)
    if (a.dims[axis] != b.dims[axis])
      throw DimensionError("dice: dims mismatch on axis " + std::to_string(axis) + " (" +
                           std::to_string(a.dims[axis]) + " vs " + std::to_string(b.dims[axis]) +
                           ")");
  std::array<std::int64_t, kNumRegions> count_a{}, count_b{}, inter{};
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    ++count_a[a.labels[i]];
    ++count_b[b.labels[i]];
    if (a.labels[i] == b.labels[i]) ++inter[a.labels[i]];
  }

  DiceResult out;
  double sum = 0.0;
  int n = 0;
  double brain_sum = 0.0;
  int brain_n = 0;
  for (int c = 1; c < kNumRegions; ++c) {
    if (count_a[c] + count_b[c] == 0) continue;
    const double score =
        2.0 * static_cast<double>(inter[c]) / static_cast<double>(count_a[c] + count_b[c]);
    out.per_class[c] = score;
    sum += score;
    ++n;
    if (c >= kFirstBrainRegion) {
      brain_sum += score;
      ++brain_n;
    }
  }
  out.class_average = n > 0 ? sum / n : 1.0;
  out.brain_class_average = brain_n > 0 ? brain_sum / brain_n : 1.0;
  return out;
}

RegionLabels toy_segment(const Volume& v, const BinaryMask& brain_mask) {
  for (int axis = 0; axis < 3; ++axis)
    if (v.dims[axis] != brain_mask.dims[axis])
      throw DimensionError("toy_segment: dims mismatch on axis " + std::to_string(axis));
  RegionLabels out;
  out.dims = v.dims;
  out.labels.assign(v.voxels.size(), static_cast<std::uint8_t>(Region::background));
  const float b01 = 0.5f * (kSubregionIntensity[0] + kSubregionIntensity[1]);
  const float b12 = 0.5f * (kSubregionIntensity[1] + kSubregionIntensity[2]);
  const float b23 = 0.5f * (kSubregionIntensity[2] + kSubregionIntensity[3]);
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    if (!brain_mask.bits[i]) continue;
    const float x = v.voxels[i];
    Region r;
    if (x >= b01)
      r = Region::sub1;
    else if (x >= b12)
      r = Region::sub2;
    else if (x >= b23)
      r = Region::sub3;
    else
      r = Region::sub4;
    out.labels[i] = static_cast<std::uint8_t>(r);
  }
  return out;
}

}  // namespace deid
