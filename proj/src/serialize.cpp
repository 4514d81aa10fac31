#include "deid/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "deid/common.hpp"

namespace deid {

namespace {

std::int64_t shape_product(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int s : shape) n *= s;
  return n;
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                      const nlohmann::json& config) {
  nlohmann::json manifest;
  manifest["format"] = "deid-ckpt";
  manifest["version"] = 1;
  manifest["config"] = config;
  nlohmann::json entries = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& t : tensors) {
    if (shape_product(t.shape) != static_cast<std::int64_t>(t.data.size()))
      throw DimensionError("checkpoint: tensor '" + t.name + "' data does not match shape");
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += static_cast<std::int64_t>(t.data.size()) * 4;
  }
  manifest["tensors"] = entries;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot open '" + path + "' for writing");
  out << manifest.dump() << "\n";
  for (const auto& t : tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * 4));
  if (!out) throw Error("checkpoint: write failed for '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("checkpoint: missing manifest line at byte offset 0 in '" + path + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: bad manifest JSON at byte offset 0 in '" + path +
                      "': " + e.what());
  }
  if (manifest.value("format", "") != "deid-ckpt")
    throw FormatError("checkpoint: bad magic at byte offset 0 in '" + path + "'");

  const std::int64_t payload_start = static_cast<std::int64_t>(line.size()) + 1;
  Checkpoint ckpt;
  ckpt.config = manifest.value("config", nlohmann::json::object());
  for (const auto& e : manifest.at("tensors")) {
    NamedTensor t;
    t.name = e.at("name").get<std::string>();
    t.shape = e.at("shape").get<std::vector<int>>();
    const std::int64_t offset = e.at("offset").get<std::int64_t>();
    const std::int64_t count = shape_product(t.shape);
    t.data.resize(static_cast<std::size_t>(count));
    in.seekg(payload_start + offset, std::ios::beg);
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(count * 4));
    if (in.gcount() != count * 4)
      throw FormatError("checkpoint: truncated payload for tensor '" + t.name +
                        "' at byte offset " + std::to_string(payload_start + offset) + " in '" +
                        path + "'");
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

const NamedTensor& find_tensor(const Checkpoint& ckpt, const std::string& name,
                               const std::vector<int>& expect_shape) {
  for (const auto& t : ckpt.tensors) {
    if (t.name != name) continue;
    if (t.shape != expect_shape) {
      std::ostringstream msg;
      msg << "checkpoint: tensor '" << name << "' has shape [";
      for (std::size_t i = 0; i < t.shape.size(); ++i) msg << (i ? "," : "") << t.shape[i];
      msg << "], expected [";
      for (std::size_t i = 0; i < expect_shape.size(); ++i)
        msg << (i ? "," : "") << expect_shape[i];
      msg << "]";
      throw FormatError(msg.str());
    }
    return t;
  }
  throw FormatError("checkpoint: tensor '" + name + "' not found");
}

std::string fnv1a64_hex(const void* data, std::size_t n) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(data, n)));
  return std::string(buf);
}

std::string file_checksum_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checksum: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a64_hex(bytes.data(), bytes.size());
}

}  // namespace deid
