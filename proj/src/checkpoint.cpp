#include "edgepop/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace edgepop {

namespace {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError(std::string("checkpoint truncated reading ") + what);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
  const auto n = read_pod<uint64_t>(in, what);
  if (n > (1ull << 32)) throw FormatError(std::string("implausible length for ") + what);
  std::string s(static_cast<size_t>(n), '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw FormatError(std::string("checkpoint truncated reading ") + what);
  return s;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, kVersion);
  write_pod<uint64_t>(out, config_hash);
  write_pod<uint64_t>(out, seed);
  write_pod<int64_t>(out, epoch);
  write_string(out, config_text);
  write_pod<uint32_t>(out, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    write_string(out, e.name);
    write_pod<uint8_t>(out, static_cast<uint8_t>(e.dtype));
    write_pod<uint8_t>(out, static_cast<uint8_t>(e.shape.size()));
    for (int64_t d : e.shape) write_pod<int64_t>(out, d);
    write_pod<uint64_t>(out, e.bytes.size());
    out.write(reinterpret_cast<const char*>(e.bytes.data()),
              static_cast<std::streamsize>(e.bytes.size()));
  }
  if (!out) throw FormatError("write failed on " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = read_pod<uint32_t>(in, "version");
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(kVersion) + ")");
  }
  Checkpoint ck;
  ck.config_hash = read_pod<uint64_t>(in, "config_hash");
  ck.seed = read_pod<uint64_t>(in, "seed");
  ck.epoch = read_pod<int64_t>(in, "epoch");
  ck.config_text = read_string(in, "config");
  const auto count = read_pod<uint32_t>(in, "entry count");
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = read_string(in, "entry name");
    const auto dtype = read_pod<uint8_t>(in, "dtype");
    if (dtype > 1) throw FormatError("bad dtype tag in '" + e.name + "'");
    e.dtype = static_cast<DType>(dtype);
    const auto rank = read_pod<uint8_t>(in, "rank");
    int64_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      e.shape.push_back(read_pod<int64_t>(in, "shape"));
      if (e.shape.back() < 0) throw FormatError("negative extent in '" + e.name + "'");
      numel *= e.shape.back();
    }
    const auto nbytes = read_pod<uint64_t>(in, "byte count");
    const size_t elem = e.dtype == DType::F32 ? 4 : 8;
    if (nbytes != static_cast<uint64_t>(numel) * elem) {
      throw FormatError("byte count " + std::to_string(nbytes) + " inconsistent with shape of '" +
                        e.name + "'");
    }
    e.bytes.resize(static_cast<size_t>(nbytes));
    in.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw FormatError("checkpoint truncated in tensor '" + e.name + "'");
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

}  // namespace edgepop
