#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "edgepop/tensor.hpp"

namespace edgepop {

// Self-describing binary container: magic, version, metadata block, then
// (name, dtype, shape, raw bytes) entries. save -> load -> save round-trips
// bitwise.
struct CheckpointEntry {
  std::string name;
  DType dtype = DType::F32;
  std::vector<int64_t> shape;
  std::vector<uint8_t> bytes;
};

class Checkpoint {
 public:
  static constexpr char kMagic[8] = {'E', 'P', 'O', 'P', 'C', 'K', 'P', 'T'};
  static constexpr uint32_t kVersion = 1;

  uint64_t config_hash = 0;
  uint64_t seed = 0;
  int64_t epoch = 0;
  std::string config_text;
  std::vector<CheckpointEntry> entries;

  template <typename T>
  void add(const std::string& name, const Tensor<T>& t) {
    CheckpointEntry e;
    e.name = name;
    e.dtype = dtype_of<T>();
    e.shape = t.shape();
    e.bytes.resize(static_cast<size_t>(t.numel()) * sizeof(T));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    entries.push_back(std::move(e));
  }

  template <typename T>
  Tensor<T> tensor(const std::string& name) const {
    const CheckpointEntry* e = find(name);
    if (!e) throw FormatError("checkpoint has no tensor '" + name + "'");
    if (e->dtype != dtype_of<T>()) throw FormatError("dtype mismatch for tensor '" + name + "'");
    Tensor<T> t{e->shape};
    if (e->bytes.size() != static_cast<size_t>(t.numel()) * sizeof(T)) {
      throw FormatError("byte count mismatch for tensor '" + name + "'");
    }
    std::memcpy(t.data(), e->bytes.data(), e->bytes.size());
    return t;
  }

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace edgepop
