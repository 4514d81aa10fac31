#include "deid/vqvae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace deid {

Codebook Codebook::make(Rng& rng, int n_cv, int d_code) {
  if (n_cv < 2) throw ConfigError("codebook: n_cv must be >= 2");
  Codebook cb;
  cb.n_cv = n_cv;
  cb.d_code = d_code;
  cb.entries.resize(static_cast<std::size_t>(n_cv) * d_code);
  for (auto& e : cb.entries) e = static_cast<float>(rng.normal()) * 0.3f;
  cb.usage_ema.assign(n_cv, 1.0f);
  cb.embed_avg = cb.entries;
  cb.dead_steps.assign(n_cv, 0);
  return cb;
}

VqVaeModel VqVaeModel::make(const VqVaeConfig& cfg, std::uint64_t seed) {
  if (cfg.volume_dim % 4 != 0)
    throw ConfigError("vqvae: volume_dim must be divisible by 4, got " +
                      std::to_string(cfg.volume_dim));
  Rng rng(seed);
  VqVaeModel m;
  m.cfg = cfg;
  m.enc_in = nn::Conv3dLayer::make(rng, 1, cfg.c1, 3);
  m.enc_res1 = nn::ResBlock3d::make(rng, cfg.c1);
  m.enc_down = nn::Conv3dLayer::make(rng, cfg.c1, cfg.c2, 3);
  m.enc_res2 = nn::ResBlock3d::make(rng, cfg.c2);
  m.enc_out = nn::Conv3dLayer::make(rng, cfg.c2, cfg.d_code, 3);
  m.dec_in = nn::Conv3dLayer::make(rng, cfg.d_code, cfg.c2, 3);
  m.dec_res1 = nn::ResBlock3d::make(rng, cfg.c2);
  m.dec_up1 = nn::ConvT3dLayer::make(rng, cfg.c2, cfg.c1, 4);
  m.dec_res2 = nn::ResBlock3d::make(rng, cfg.c1);
  m.dec_up2 = nn::ConvT3dLayer::make(rng, cfg.c1, cfg.c1, 4);
  m.dec_out = nn::Conv3dLayer::make(rng, cfg.c1, 1, 3);
  m.codebook = Codebook::make(rng, cfg.n_cv, cfg.d_code);
  return m;
}

std::vector<nn::Param> VqVaeModel::params() const {
  std::vector<nn::Param> out;
  enc_in.params("enc.in", out);
  enc_res1.params("enc.res1", out);
  enc_down.params("enc.down", out);
  enc_res2.params("enc.res2", out);
  enc_out.params("enc.out", out);
  dec_in.params("dec.in", out);
  dec_res1.params("dec.res1", out);
  dec_up1.params("dec.up1", out);
  dec_res2.params("dec.res2", out);
  dec_up2.params("dec.up2", out);
  dec_out.params("dec.out", out);
  return out;
}

Tensorf VqVaeModel::encode_continuous(const Tensorf& x) const {
  auto h = ops::relu(enc_in.forward(x, 2, 1));
  h = enc_res1.forward(h);
  h = ops::relu(enc_down.forward(h, 2, 1));
  h = enc_res2.forward(h);
  return enc_out.forward(h, 1, 1);
}

Tensorf VqVaeModel::decode_continuous(const Tensorf& z_q) const {
  auto h = ops::relu(dec_in.forward(z_q, 1, 1));
  h = dec_res1.forward(h);
  h = ops::relu(dec_up1.forward(h, 2, 1, 0));
  h = dec_res2.forward(h);
  h = ops::relu(dec_up2.forward(h, 2, 1, 0));
  return dec_out.forward(h, 1, 1);
}

std::pair<std::vector<std::uint16_t>, Tensorf> quantize(const Codebook& cb, const Tensorf& z) {
  if (z.shape().size() != 5)
    throw DimensionError("quantize: expects [N,d_code,s,s,s]");
  if (z.shape()[1] != cb.d_code)
    throw DimensionError("quantize: vector dimension " + std::to_string(z.shape()[1]) +
                         " does not match d_code " + std::to_string(cb.d_code));
  for (float v : z.value())
    if (!std::isfinite(v)) throw NumericError("quantize: non-finite input");

  const int n = z.shape()[0];
  const int dc = cb.d_code;
  const std::int64_t sp =
      static_cast<std::int64_t>(z.shape()[2]) * z.shape()[3] * z.shape()[4];
  std::vector<std::uint16_t> codes(static_cast<std::size_t>(n) * sp);
  std::vector<float> zq(z.value().size());

  for (int i = 0; i < n; ++i)
    for (std::int64_t s = 0; s < sp; ++s) {
      double best = 1e300;
      int best_k = 0;
      for (int k = 0; k < cb.n_cv; ++k) {
        double dist = 0.0;
        for (int c = 0; c < dc; ++c) {
          const double d =
              static_cast<double>(z.value()[(static_cast<std::int64_t>(i) * dc + c) * sp + s]) -
              static_cast<double>(cb.entries[static_cast<std::size_t>(k) * dc + c]);
          dist += d * d;
        }
        if (dist < best) {
          best = dist;
          best_k = k;
        }
      }
      codes[static_cast<std::size_t>(i) * sp + s] = static_cast<std::uint16_t>(best_k);
      for (int c = 0; c < dc; ++c)
        zq[(static_cast<std::int64_t>(i) * dc + c) * sp + s] =
            cb.entries[static_cast<std::size_t>(best_k) * dc + c];
    }

  // Straight-through: the gradient of z_q is copied to z; the codebook
  // learns by EMA, not by gradient.
  auto node = Tensorf::make_node(z.shape(), std::move(zq), {z}, nullptr);
  if (node.requires_grad()) {
    auto* self = node.impl();
    auto* zi = z.impl();
    node.impl()->backward_fn = [self, zi]() {
      if (!zi->requires_grad) return;
      zi->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) zi->grad[i] += self->grad[i];
    };
  }
  return {std::move(codes), std::move(node)};
}

namespace {

Tensorf volume_to_tensor(const Volume& v) {
  return Tensorf::from_data({1, 1, v.dims[0], v.dims[1], v.dims[2]}, v.voxels, false);
}

Tensorf batch_to_tensor(const std::vector<Volume>& batch) {
  const Dims3 d = batch.front().dims;
  std::vector<float> data;
  data.reserve(batch.size() * static_cast<std::size_t>(volume_of(d)));
  for (const auto& v : batch) {
    if (v.dims != d) throw DimensionError("vqvae: batch volumes must share dims");
    data.insert(data.end(), v.voxels.begin(), v.voxels.end());
  }
  return Tensorf::from_data({static_cast<int>(batch.size()), 1, d[0], d[1], d[2]},
                            std::move(data), false);
}

Tensorf codes_to_vectors(const Codebook& cb, const LatentGrid& g) {
  const std::int64_t sp = g.size();
  std::vector<float> data(static_cast<std::size_t>(cb.d_code) * sp);
  for (std::int64_t s = 0; s < sp; ++s) {
    const int code = g.codes[s];
    if (code >= cb.n_cv)
      throw Error("decode: invalid code " + std::to_string(code) + " at site " +
                  std::to_string(s) + " (n_cv " + std::to_string(cb.n_cv) + ")");
    for (int c = 0; c < cb.d_code; ++c)
      data[static_cast<std::int64_t>(c) * sp + s] =
          cb.entries[static_cast<std::size_t>(code) * cb.d_code + c];
  }
  return Tensorf::from_data({1, cb.d_code, g.dims[0], g.dims[1], g.dims[2]}, std::move(data),
                            false);
}

}  // namespace

LatentGrid encode(const VqVaeModel& m, const Volume& v) {
  const int s_dim = m.cfg.volume_dim;
  if (v.dims[0] != s_dim || v.dims[1] != s_dim || v.dims[2] != s_dim)
    throw DimensionError("encode: volume dims (" + std::to_string(v.dims[0]) + "," +
                         std::to_string(v.dims[1]) + "," + std::to_string(v.dims[2]) +
                         ") do not match model volume_dim " + std::to_string(s_dim));
  auto z = m.encode_continuous(volume_to_tensor(v));
  auto quantized = quantize(m.codebook, z);
  LatentGrid g;
  const int s = m.cfg.latent_dim();
  g.dims = {s, s, s};
  g.n_cv = m.cfg.n_cv;
  g.codes = std::move(quantized.first);
  return g;
}

Volume decode(const VqVaeModel& m, const LatentGrid& g) {
  const int s = m.cfg.latent_dim();
  if (g.dims[0] != s || g.dims[1] != s || g.dims[2] != s)
    throw DimensionError("decode: latent dims do not match model latent side " +
                         std::to_string(s));
  auto y = m.decode_continuous(codes_to_vectors(m.codebook, g));
  Volume out;
  out.dims = {m.cfg.volume_dim, m.cfg.volume_dim, m.cfg.volume_dim};
  out.voxels = y.value();
  for (auto& v : out.voxels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

namespace {

void ema_update_codebook(VqVaeModel& m, const std::vector<float>& z_values,
                         const std::vector<std::uint16_t>& codes, std::int64_t sp, int batch_n,
                         Rng& rng) {
  Codebook& cb = m.codebook;
  const int dc = cb.d_code;
  const float decay = m.cfg.ema_decay;
  const std::int64_t total_sites = static_cast<std::int64_t>(batch_n) * sp;

  std::vector<double> counts(cb.n_cv, 0.0);
  std::vector<double> sums(static_cast<std::size_t>(cb.n_cv) * dc, 0.0);
  for (int i = 0; i < batch_n; ++i)
    for (std::int64_t s = 0; s < sp; ++s) {
      const int k = codes[static_cast<std::size_t>(i) * sp + s];
      counts[k] += 1.0;
      for (int c = 0; c < dc; ++c)
        sums[static_cast<std::size_t>(k) * dc + c] +=
            static_cast<double>(z_values[(static_cast<std::int64_t>(i) * dc + c) * sp + s]);
    }

  for (int k = 0; k < cb.n_cv; ++k) {
    cb.usage_ema[k] = decay * cb.usage_ema[k] + (1.0f - decay) * static_cast<float>(counts[k]);
    for (int c = 0; c < dc; ++c) {
      const std::size_t idx = static_cast<std::size_t>(k) * dc + c;
      cb.embed_avg[idx] =
          decay * cb.embed_avg[idx] + (1.0f - decay) * static_cast<float>(sums[idx]);
    }
    if (cb.usage_ema[k] > 1e-5f)
      for (int c = 0; c < dc; ++c) {
        const std::size_t idx = static_cast<std::size_t>(k) * dc + c;
        cb.entries[idx] = cb.embed_avg[idx] / cb.usage_ema[k];
      }
  }

  // Dead-code reseeding: an entry whose usage EMA stays below the threshold
  // for dead_code_steps consecutive steps is replanted on a random encoder
  // output from the current batch.
  for (int k = 0; k < cb.n_cv; ++k) {
    if (cb.usage_ema[k] < m.cfg.dead_code_threshold)
      ++cb.dead_steps[k];
    else
      cb.dead_steps[k] = 0;
    if (cb.dead_steps[k] >= m.cfg.dead_code_steps) {
      const std::int64_t pick = static_cast<std::int64_t>(rng.uniform_int(
          static_cast<std::uint64_t>(total_sites)));
      const int i = static_cast<int>(pick / sp);
      const std::int64_t s = pick % sp;
      for (int c = 0; c < dc; ++c) {
        const std::size_t idx = static_cast<std::size_t>(k) * dc + c;
        cb.entries[idx] = z_values[(static_cast<std::int64_t>(i) * dc + c) * sp + s];
        cb.embed_avg[idx] = cb.entries[idx];
      }
      cb.usage_ema[k] = 1.0f;
      cb.dead_steps[k] = 0;
    }
  }
}

void seed_codebook_from_batch(VqVaeModel& m, const std::vector<float>& z_values,
                              std::int64_t sp, int batch_n, Rng& rng) {
  Codebook& cb = m.codebook;
  const int dc = cb.d_code;
  const std::int64_t total_sites = static_cast<std::int64_t>(batch_n) * sp;
  for (int k = 0; k < cb.n_cv; ++k) {
    const std::int64_t pick =
        static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(total_sites)));
    const int i = static_cast<int>(pick / sp);
    const std::int64_t s = pick % sp;
    for (int c = 0; c < dc; ++c) {
      const std::size_t idx = static_cast<std::size_t>(k) * dc + c;
      cb.entries[idx] =
          z_values[(static_cast<std::int64_t>(i) * dc + c) * sp + s] +
          0.01f * static_cast<float>(rng.normal());
      cb.embed_avg[idx] = cb.entries[idx];
    }
    cb.usage_ema[k] = 1.0f;
  }
  m.codebook_seeded = true;
}

}  // namespace

VqLossRecord vqvae_train_step(VqVaeModel& m, const std::vector<Volume>& batch, Adam<float>& opt,
                              Rng& rng) {
  if (batch.empty()) throw Error("vqvae_train_step: empty batch");
  auto x = batch_to_tensor(batch);

  auto z = m.encode_continuous(x);
  const std::int64_t sp =
      static_cast<std::int64_t>(z.shape()[2]) * z.shape()[3] * z.shape()[4];

  if (!m.codebook_seeded) seed_codebook_from_batch(m, z.value(), sp, z.shape()[0], rng);

  auto [codes, z_q] = quantize(m.codebook, z);
  auto recon = m.decode_continuous(z_q);
  auto loss_rec = ops::mse_loss(recon, x);
  auto loss_commit = ops::mse_loss(z, z_q.detach());
  auto loss = ops::add(loss_rec, ops::scale(loss_commit, m.cfg.beta));

  // Codebook term reported for monitoring; the EMA update owns the entries.
  double codebook_term = 0.0;
  {
    const auto& zv = z.value();
    const auto& zqv = z_q.value();
    for (std::size_t i = 0; i < zv.size(); ++i) {
      const double d = static_cast<double>(zqv[i]) - static_cast<double>(zv[i]);
      codebook_term += d * d;
    }
    codebook_term /= static_cast<double>(zv.size());
  }

  VqLossRecord rec;
  rec.reconstruction = loss_rec.item();
  rec.codebook = codebook_term;
  rec.commitment = loss_commit.item();
  rec.total = loss.item();
  if (!std::isfinite(rec.total))
    throw NumericError("vqvae_train_step: non-finite loss, state not committed");

  opt.zero_grad();
  loss.backward();
  opt.step();
  opt.zero_grad();

  ema_update_codebook(m, z.value(), codes, sp, z.shape()[0], rng);
  return rec;
}

std::vector<std::pair<LatentGrid, LatentGrid>> encode_dataset(
    const VqVaeModel& m_brain, const VqVaeModel& m_skull,
    const std::vector<std::pair<Volume, BinaryMask>>& dataset) {
  if (m_brain.cfg.latent_dim() != m_skull.cfg.latent_dim() ||
      m_brain.cfg.volume_dim != m_skull.cfg.volume_dim)
    throw ConfigError("encode_dataset: models disagree on latent shape (" +
                      std::to_string(m_brain.cfg.latent_dim()) + " vs " +
                      std::to_string(m_skull.cfg.latent_dim()) + ")");
  std::vector<std::pair<LatentGrid, LatentGrid>> out;
  out.reserve(dataset.size());
  for (const auto& [v, mask] : dataset) {
    LatentGrid e1 = encode(m_brain, apply_mask(v, mask, false));
    LatentGrid e2 = encode(m_skull, apply_mask(v, mask, true));
    out.emplace_back(std::move(e1), std::move(e2));
  }
  return out;
}

void save_vqvae(const VqVaeModel& m, const std::string& path) {
  auto tensors = nn::to_named(m.params());
  tensors.push_back({"codebook.entries", {m.cfg.n_cv, m.cfg.d_code}, m.codebook.entries});
  tensors.push_back({"codebook.usage_ema", {m.cfg.n_cv}, m.codebook.usage_ema});
  tensors.push_back({"codebook.embed_avg", {m.cfg.n_cv, m.cfg.d_code}, m.codebook.embed_avg});
  nlohmann::json config;
  config["kind"] = "vqvae";
  config["part"] = m.cfg.part;
  config["S"] = m.cfg.volume_dim;
  config["s"] = m.cfg.latent_dim();
  config["n_cv"] = m.cfg.n_cv;
  config["d_code"] = m.cfg.d_code;
  config["beta"] = m.cfg.beta;
  config["channels"] = {m.cfg.c1, m.cfg.c2};
  config["ema_decay"] = m.cfg.ema_decay;
  config["dead_code_steps"] = m.cfg.dead_code_steps;
  config["dead_code_threshold"] = m.cfg.dead_code_threshold;
  config["codebook_seeded"] = m.codebook_seeded;
  write_checkpoint(path, tensors, config);
}

VqVaeModel load_vqvae(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.config.value("kind", "") != "vqvae")
    throw FormatError("load_vqvae: '" + path + "' is not a vqvae checkpoint");
  VqVaeConfig cfg;
  cfg.volume_dim = ckpt.config.at("S").get<int>();
  cfg.n_cv = ckpt.config.at("n_cv").get<int>();
  cfg.d_code = ckpt.config.at("d_code").get<int>();
  cfg.beta = ckpt.config.at("beta").get<float>();
  const auto channels = ckpt.config.at("channels").get<std::vector<int>>();
  cfg.c1 = channels.at(0);
  cfg.c2 = channels.at(1);
  cfg.part = ckpt.config.value("part", "brain");
  cfg.ema_decay = ckpt.config.value("ema_decay", 0.99f);
  cfg.dead_code_steps = ckpt.config.value("dead_code_steps", 50);
  cfg.dead_code_threshold = ckpt.config.value("dead_code_threshold", 0.1f);

  VqVaeModel m = VqVaeModel::make(cfg, 0);
  nn::load_params(m.params(), ckpt);
  m.codebook.entries = find_tensor(ckpt, "codebook.entries", {cfg.n_cv, cfg.d_code}).data;
  m.codebook.usage_ema = find_tensor(ckpt, "codebook.usage_ema", {cfg.n_cv}).data;
  m.codebook.embed_avg = find_tensor(ckpt, "codebook.embed_avg", {cfg.n_cv, cfg.d_code}).data;
  m.codebook_seeded = ckpt.config.value("codebook_seeded", true);
  return m;
}

void write_latent_pair(const std::string& path, const LatentGrid& e1, const LatentGrid& e2) {
  if (e1.dims != e2.dims || e1.n_cv != e2.n_cv)
    throw DimensionError("write_latent_pair: grids disagree on dims or n_cv");
  nlohmann::json header;
  header["dims"] = e1.dims;
  header["n_cv"] = e1.n_cv;
  header["dtype"] = "u16le";
  header["tensors"] = {"e1", "e2"};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_latent_pair: cannot open '" + path + "'");
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(e1.codes.data()),
            static_cast<std::streamsize>(e1.codes.size() * 2));
  out.write(reinterpret_cast<const char*>(e2.codes.data()),
            static_cast<std::streamsize>(e2.codes.size() * 2));
  if (!out) throw Error("write_latent_pair: write failed for '" + path + "'");
}

std::pair<LatentGrid, LatentGrid> read_latent_pair(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_latent_pair: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("read_latent_pair: missing header at byte offset 0 in '" + path + "'");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("read_latent_pair: bad header JSON at byte offset 0 in '" + path +
                      "': " + e.what());
  }
  const auto dims = header.at("dims").get<std::vector<int>>();
  if (dims.size() != 3)
    throw FormatError("read_latent_pair: unsupported dimensionality in '" + path + "'");
  LatentGrid e1, e2;
  e1.dims = {dims[0], dims[1], dims[2]};
  e2.dims = e1.dims;
  e1.n_cv = header.at("n_cv").get<int>();
  e2.n_cv = e1.n_cv;
  const std::int64_t count = e1.size();
  e1.codes.resize(static_cast<std::size_t>(count));
  e2.codes.resize(static_cast<std::size_t>(count));
  in.read(reinterpret_cast<char*>(e1.codes.data()), static_cast<std::streamsize>(count * 2));
  in.read(reinterpret_cast<char*>(e2.codes.data()), static_cast<std::streamsize>(count * 2));
  if (in.gcount() != count * 2)
    throw FormatError("read_latent_pair: truncated payload in '" + path + "'");
  for (std::int64_t i = 0; i < count; ++i)
    if (static_cast<int>(e1.codes[i]) >= e1.n_cv || static_cast<int>(e2.codes[i]) >= e2.n_cv)
      throw FormatError("read_latent_pair: invalid code at site " + std::to_string(i) + " in '" +
                        path + "'");
  return {std::move(e1), std::move(e2)};
}

double psnr(const Volume& a, const Volume& b) {
  if (a.dims != b.dims) throw DimensionError("psnr: dims mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    const double d = static_cast<double>(a.voxels[i]) - static_cast<double>(b.voxels[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.voxels.size());
  if (mse <= 0.0) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace deid
