#include "deid/mae.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace deid {

double PerturbationSchedule::alpha(double t) const {
  if (t < 0.0 || t > 1.0)
    throw Error("schedule: t " + std::to_string(t) + " outside [0,1]");
  switch (kind) {
    case Kind::linear:
      return 1.0 - t;
    case Kind::cosine:
      return std::cos(1.5707963267948966 * t);
  }
  return 0.0;
}

PerturbationSchedule PerturbationSchedule::from_name(const std::string& name) {
  if (name == "linear") return {Kind::linear};
  if (name == "cosine") return {Kind::cosine};
  throw ConfigError("schedule: unknown kind '" + name + "' (expected linear or cosine)");
}

std::string PerturbationSchedule::name() const {
  return kind == Kind::linear ? "linear" : "cosine";
}

std::pair<LatentGrid, BinaryMask> perturb(const LatentGrid& codes, double t,
                                          const PerturbationSchedule& sched, Rng& rng) {
  const double a = sched.alpha(t);
  LatentGrid noised = codes;
  BinaryMask kept = make_mask(codes.dims, true);
  for (std::size_t i = 0; i < codes.codes.size(); ++i) {
    if (rng.uniform() < a) continue;
    noised.codes[i] =
        static_cast<std::uint16_t>(rng.uniform_int(static_cast<std::uint64_t>(codes.n_cv)));
    kept.bits[i] = 0;
  }
  return {std::move(noised), std::move(kept)};
}

MaeModel MaeModel::make(const MaeConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  MaeModel m;
  m.cfg = cfg;
  {
    std::vector<float> data(static_cast<std::size_t>(cfg.n_cv) * cfg.d_emb);
    for (auto& v : data) v = static_cast<float>(rng.normal()) * 0.05f;
    m.skull_table = Tensorf::from_data({cfg.n_cv, cfg.d_emb}, std::move(data), true);
  }
  {
    std::vector<float> data(static_cast<std::size_t>(cfg.n_cv) * cfg.d_emb);
    for (auto& v : data) v = static_cast<float>(rng.normal()) * 0.05f;
    m.brain_table = Tensorf::from_data({cfg.n_cv, cfg.d_emb}, std::move(data), true);
  }
  m.proj_in = nn::Conv3dLayer::make(rng, 2 * cfg.d_emb, cfg.width, 1);
  m.time_fc1 = nn::LinearLayer::make(rng, cfg.time_dim, cfg.width);
  m.time_fc2 = nn::LinearLayer::make(rng, cfg.width, cfg.width);
  m.trunk.reserve(cfg.blocks);
  for (int i = 0; i < cfg.blocks; ++i) m.trunk.push_back(nn::ResBlock3d::make(rng, cfg.width));
  m.head_norm = nn::GroupNormLayer::make(cfg.width);
  m.head = nn::Conv3dLayer::make(rng, cfg.width, cfg.n_cv, 1);
  // Near-zero head: an untrained model predicts almost-uniform logits, yet
  // the conditioning path stays observable.
  for (auto& v : m.head.w.mutable_value()) v *= 0.01f;
  return m;
}

std::vector<nn::Param> MaeModel::params() const {
  std::vector<nn::Param> out;
  out.emplace_back("skull_table", skull_table);
  out.emplace_back("brain_table", brain_table);
  proj_in.params("proj_in", out);
  time_fc1.params("time_fc1", out);
  time_fc2.params("time_fc2", out);
  for (std::size_t i = 0; i < trunk.size(); ++i)
    trunk[i].params("trunk" + std::to_string(i), out);
  head_norm.params("head_norm", out);
  head.params("head", out);
  return out;
}

namespace {

std::vector<float> sinusoidal_features(double t, int dim) {
  std::vector<float> f(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    f[i] = static_cast<float>(std::sin(t * freq * 6.283185307179586));
    f[half + i] = static_cast<float>(std::cos(t * freq * 6.283185307179586));
  }
  return f;
}

void validate_grid(const LatentGrid& g, int s, int n_cv, const char* role) {
  if (g.dims[0] != s || g.dims[1] != s || g.dims[2] != s)
    throw DimensionError(std::string("mae_forward: ") + role + " grid dims (" +
                         std::to_string(g.dims[0]) + "," + std::to_string(g.dims[1]) + "," +
                         std::to_string(g.dims[2]) + ") do not match latent side " +
                         std::to_string(s));
  for (std::size_t i = 0; i < g.codes.size(); ++i)
    if (static_cast<int>(g.codes[i]) >= n_cv)
      throw Error(std::string("mae_forward: ") + role + " grid has invalid code " +
                  std::to_string(g.codes[i]) + " at site " + std::to_string(i));
}

}  // namespace

Tensorf mae_forward_batch(const MaeModel& m, const std::vector<LatentGrid>& noised_skull,
                          const std::vector<LatentGrid>& brain, const std::vector<double>& t) {
  if (noised_skull.empty() || noised_skull.size() != brain.size() || t.size() != brain.size())
    throw DimensionError("mae_forward: batch lists must be non-empty and equally sized");
  const int n = static_cast<int>(noised_skull.size());
  const int s = m.cfg.latent_dim;
  const std::int64_t sp = static_cast<std::int64_t>(s) * s * s;

  std::vector<std::uint16_t> skull_codes, brain_codes;
  skull_codes.reserve(static_cast<std::size_t>(n) * sp);
  brain_codes.reserve(static_cast<std::size_t>(n) * sp);
  for (int i = 0; i < n; ++i) {
    validate_grid(noised_skull[i], s, m.cfg.n_cv, "skull");
    validate_grid(brain[i], s, m.cfg.n_cv, "brain");
    skull_codes.insert(skull_codes.end(), noised_skull[i].codes.begin(),
                       noised_skull[i].codes.end());
    brain_codes.insert(brain_codes.end(), brain[i].codes.begin(), brain[i].codes.end());
  }

  auto emb_s = ops::embed_codes(m.skull_table, skull_codes, n, s, s, s);
  auto emb_b = ops::embed_codes(m.brain_table, brain_codes, n, s, s, s);
  auto h = m.proj_in.forward(ops::concat_channels(emb_s, emb_b), 1, 0);

  std::vector<float> tfeat;
  tfeat.reserve(static_cast<std::size_t>(n) * m.cfg.time_dim);
  for (int i = 0; i < n; ++i) {
    if (t[i] < 0.0 || t[i] > 1.0)
      throw Error("mae_forward: t " + std::to_string(t[i]) + " outside [0,1]");
    const auto f = sinusoidal_features(t[i], m.cfg.time_dim);
    tfeat.insert(tfeat.end(), f.begin(), f.end());
  }
  auto temb = Tensorf::from_data({n, m.cfg.time_dim}, std::move(tfeat), false);
  auto tvec = m.time_fc2.forward(ops::relu(m.time_fc1.forward(temb)));
  h = ops::add_channel_vec(h, tvec);

  for (const auto& block : m.trunk) h = block.forward(h);
  return m.head.forward(ops::relu(m.head_norm.forward(h)), 1, 0);
}

Tensorf mae_forward(const MaeModel& m, const LatentGrid& noised_skull, const LatentGrid& brain,
                    double t) {
  return mae_forward_batch(m, {noised_skull}, {brain}, {t});
}

MaeLossRecord mae_train_step(MaeModel& m,
                             const std::vector<std::pair<LatentGrid, LatentGrid>>& batch,
                             const PerturbationSchedule& sched, Adam<float>& opt, Rng& rng) {
  if (batch.empty()) throw Error("mae_train_step: empty batch");
  MaeLossRecord rec;
  std::vector<LatentGrid> noised, brains;
  std::vector<std::uint16_t> targets;
  noised.reserve(batch.size());
  brains.reserve(batch.size());
  for (const auto& [e1, e2] : batch) {
    const double t = rng.uniform();  // independent per batch element
    rec.t_drawn.push_back(t);
    auto [noisy, kept] = perturb(e2, t, sched, rng);
    noised.push_back(std::move(noisy));
    brains.push_back(e1);
    targets.insert(targets.end(), e2.codes.begin(), e2.codes.end());
  }
  std::vector<double> ts = rec.t_drawn;
  auto logits = mae_forward_batch(m, noised, brains, ts);
  auto loss = ops::softmax_cross_entropy(logits, targets);
  rec.cross_entropy = loss.item();
  if (!std::isfinite(rec.cross_entropy))
    throw NumericError("mae_train_step: non-finite loss, state not committed");
  opt.zero_grad();
  loss.backward();
  opt.step();
  opt.zero_grad();
  return rec;
}

void save_mae(const MaeModel& m, const std::string& path) {
  nlohmann::json config;
  config["kind"] = "mae";
  config["s"] = m.cfg.latent_dim;
  config["n_cv"] = m.cfg.n_cv;
  config["d_emb"] = m.cfg.d_emb;
  config["width"] = m.cfg.width;
  config["blocks"] = m.cfg.blocks;
  config["time_dim"] = m.cfg.time_dim;
  config["schedule"] = m.cfg.schedule;
  write_checkpoint(path, nn::to_named(m.params()), config);
}

MaeModel load_mae(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.config.value("kind", "") != "mae")
    throw FormatError("load_mae: '" + path + "' is not a mae checkpoint");
  MaeConfig cfg;
  cfg.latent_dim = ckpt.config.at("s").get<int>();
  cfg.n_cv = ckpt.config.at("n_cv").get<int>();
  cfg.d_emb = ckpt.config.at("d_emb").get<int>();
  cfg.width = ckpt.config.at("width").get<int>();
  cfg.blocks = ckpt.config.at("blocks").get<int>();
  cfg.time_dim = ckpt.config.at("time_dim").get<int>();
  cfg.schedule = ckpt.config.value("schedule", "linear");
  MaeModel m = MaeModel::make(cfg, 0);
  nn::load_params(m.params(), ckpt);
  return m;
}

}  // namespace deid
