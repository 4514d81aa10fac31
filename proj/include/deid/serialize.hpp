#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deid/tensor.hpp"

namespace deid {

/// Named float32 tensor for checkpoint I/O.
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

/// Checkpoint container: one line of UTF-8 JSON (tensor names, shapes, byte
/// offsets into the payload, plus a free-form config block), a newline, then
/// the concatenated little-endian float32 payloads.
void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                      const nlohmann::json& config);

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json config;
};

Checkpoint read_checkpoint(const std::string& path);

/// Finds a tensor by name; throws FormatError when absent or shaped wrong.
const NamedTensor& find_tensor(const Checkpoint& ckpt, const std::string& name,
                               const std::vector<int>& expect_shape);

}  // namespace deid
