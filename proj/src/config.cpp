#include "deid/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace deid {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

bool is_power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

}  // namespace

std::map<std::string, std::string> parse_toml_subset(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: unterminated section header at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config: empty section name at line " + std::to_string(lineno));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " + std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config: empty key or value at line " + std::to_string(lineno));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full))
      throw ConfigError("config: duplicate key '" + full + "' at line " + std::to_string(lineno));
    out[full] = value;
  }
  return out;
}

namespace {

class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  int get_int(const std::string& key, int def) {
    const auto it = take(key);
    if (it.empty()) return def;
    try {
      std::size_t pos = 0;
      const int v = std::stoi(it, &pos);
      if (pos != it.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config: field '" + key + "' must be an integer, got '" + it + "'");
    }
  }

  double get_double(const std::string& key, double def) {
    const auto it = take(key);
    if (it.empty()) return def;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it, &pos);
      if (pos != it.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config: field '" + key + "' must be a number, got '" + it + "'");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) {
    const auto it = take(key);
    if (it.empty()) return def;
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(it, &pos);
      if (pos != it.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config: field '" + key + "' must be a non-negative integer, got '" + it +
                        "'");
    }
  }

  std::string get_string(const std::string& key, const std::string& def) {
    const auto it = take(key);
    return it.empty() ? def : it;
  }

  void finish() const {
    for (const auto& [k, v] : kv_)
      if (!consumed_.count(k)) throw ConfigError("config: unknown field '" + k + "'");
  }

 private:
  std::string take(const std::string& key) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return "";
    consumed_.insert(key);
    return it->second;
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> consumed_;
};

}  // namespace

void PipelineConfig::validate() const {
  if (schema_version != 1)
    throw ConfigError("config: schema_version must be 1, got " + std::to_string(schema_version));
  if (!is_power_of_two(dims))
    throw ConfigError("config: data.dims must be a power of two, got " + std::to_string(dims));
  if (dims < 16) throw ConfigError("config: data.dims must be >= 16");
  if (dims % 4 != 0) throw ConfigError("config: data.dims must be divisible by 4");
  if (subjects < 2) throw ConfigError("config: data.subjects must be >= 2");
  if (scans_per_subject < 2)
    throw ConfigError("config: data.scans_per_subject must be >= 2");
  if (!(train_fraction > 0.0f && train_fraction < 1.0f))
    throw ConfigError("config: data.train_fraction must be in (0,1)");
  if (n_cv < 2) throw ConfigError("config: vqvae.n_cv must be >= 2");
  if (n_cv > 65536) throw ConfigError("config: vqvae.n_cv must fit in 16 bits");
  if (d_code < 1) throw ConfigError("config: vqvae.d_code must be positive");
  if (vq_c1 < 1 || vq_c2 < 1) throw ConfigError("config: vqvae.channels must be positive");
  if (!(beta >= 0.0f)) throw ConfigError("config: vqvae.beta must be >= 0");
  if (vq_steps < 1 || vq_batch < 1)
    throw ConfigError("config: vqvae.steps and vqvae.batch must be positive");
  if (d_emb < 1 || mae_width < 1 || mae_blocks < 1)
    throw ConfigError("config: mae dimensions must be positive");
  if (mae_steps < 1 || mae_batch < 1)
    throw ConfigError("config: mae.steps and mae.batch must be positive");
  if (schedule != "linear" && schedule != "cosine")
    throw ConfigError("config: mae.schedule must be linear or cosine, got '" + schedule + "'");
  if (sampler_steps < 1) throw ConfigError("config: sampler.steps must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("config: sampler.temperature must be > 0");
  if (reid_trials < 1) throw ConfigError("config: eval.trials must be positive");
  if (trial_batches < 1) throw ConfigError("config: eval.trial_batches must be positive");
  if (embedder_steps < 1 || embedder_batch < 1)
    throw ConfigError("config: eval.embedder_steps and eval.embedder_batch must be positive");
  const int train_n = train_subjects();
  if (train_n < 8) throw ConfigError("config: train split must hold >= 8 subjects");
  // Five-way trials draw four distinct distractor subjects.
  if (subjects - train_n < 5)
    throw ConfigError("config: test split must hold >= 5 subjects");
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  ConfigReader r(parse_toml_subset(ss.str()));

  PipelineConfig c;
  c.schema_version = r.get_int("schema_version", c.schema_version);
  c.dims = r.get_int("data.dims", c.dims);
  c.subjects = r.get_int("data.subjects", c.subjects);
  c.scans_per_subject = r.get_int("data.scans_per_subject", c.scans_per_subject);
  c.noise_sigma = static_cast<float>(r.get_double("data.noise_sigma", c.noise_sigma));
  c.train_fraction = static_cast<float>(r.get_double("data.train_fraction", c.train_fraction));
  c.n_cv = r.get_int("vqvae.n_cv", c.n_cv);
  c.d_code = r.get_int("vqvae.d_code", c.d_code);
  c.vq_c1 = r.get_int("vqvae.c1", c.vq_c1);
  c.vq_c2 = r.get_int("vqvae.c2", c.vq_c2);
  c.beta = static_cast<float>(r.get_double("vqvae.beta", c.beta));
  c.ema_decay = static_cast<float>(r.get_double("vqvae.ema_decay", c.ema_decay));
  c.dead_code_steps = r.get_int("vqvae.dead_code_steps", c.dead_code_steps);
  c.dead_code_threshold =
      static_cast<float>(r.get_double("vqvae.dead_code_threshold", c.dead_code_threshold));
  c.vq_lr = r.get_double("vqvae.lr", c.vq_lr);
  c.vq_batch = r.get_int("vqvae.batch", c.vq_batch);
  c.vq_steps = r.get_int("vqvae.steps", c.vq_steps);
  c.d_emb = r.get_int("mae.d_emb", c.d_emb);
  c.mae_width = r.get_int("mae.width", c.mae_width);
  c.mae_blocks = r.get_int("mae.blocks", c.mae_blocks);
  c.schedule = r.get_string("mae.schedule", c.schedule);
  c.mae_lr = r.get_double("mae.lr", c.mae_lr);
  c.mae_batch = r.get_int("mae.batch", c.mae_batch);
  c.mae_steps = r.get_int("mae.steps", c.mae_steps);
  c.sampler_steps = r.get_int("sampler.steps", c.sampler_steps);
  c.temperature = r.get_double("sampler.temperature", c.temperature);
  c.reid_trials = r.get_int("eval.trials", c.reid_trials);
  c.trial_batches = r.get_int("eval.trial_batches", c.trial_batches);
  c.embed_dim = r.get_int("eval.embed_dim", c.embed_dim);
  c.margin = static_cast<float>(r.get_double("eval.margin", c.margin));
  c.embedder_lr = r.get_double("eval.embedder_lr", c.embedder_lr);
  c.embedder_steps = r.get_int("eval.embedder_steps", c.embedder_steps);
  c.embedder_batch = r.get_int("eval.embedder_batch", c.embedder_batch);
  c.seed = r.get_u64("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

std::string PipelineConfig::to_toml() const {
  std::ostringstream out;
  out << "schema_version = " << schema_version << "\n";
  out << "seed = " << seed << "\n\n";
  out << "[data]\n";
  out << "dims = " << dims << "\n";
  out << "subjects = " << subjects << "\n";
  out << "scans_per_subject = " << scans_per_subject << "\n";
  out << "noise_sigma = " << noise_sigma << "\n";
  out << "train_fraction = " << train_fraction << "\n\n";
  out << "[vqvae]\n";
  out << "n_cv = " << n_cv << "\n";
  out << "d_code = " << d_code << "\n";
  out << "c1 = " << vq_c1 << "\n";
  out << "c2 = " << vq_c2 << "\n";
  out << "beta = " << beta << "\n";
  out << "ema_decay = " << ema_decay << "\n";
  out << "dead_code_steps = " << dead_code_steps << "\n";
  out << "dead_code_threshold = " << dead_code_threshold << "\n";
  out << "lr = " << vq_lr << "\n";
  out << "batch = " << vq_batch << "\n";
  out << "steps = " << vq_steps << "\n\n";
  out << "[mae]\n";
  out << "d_emb = " << d_emb << "\n";
  out << "width = " << mae_width << "\n";
  out << "blocks = " << mae_blocks << "\n";
  out << "schedule = \"" << schedule << "\"\n";
  out << "lr = " << mae_lr << "\n";
  out << "batch = " << mae_batch << "\n";
  out << "steps = " << mae_steps << "\n\n";
  out << "[sampler]\n";
  out << "steps = " << sampler_steps << "\n";
  out << "temperature = " << temperature << "\n\n";
  out << "[eval]\n";
  out << "trials = " << reid_trials << "\n";
  out << "trial_batches = " << trial_batches << "\n";
  out << "embed_dim = " << embed_dim << "\n";
  out << "margin = " << margin << "\n";
  out << "embedder_lr = " << embedder_lr << "\n";
  out << "embedder_steps = " << embedder_steps << "\n";
  out << "embedder_batch = " << embedder_batch << "\n";
  return out.str();
}

}  // namespace deid
