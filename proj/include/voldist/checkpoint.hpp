#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "voldist/errors.hpp"
#include "voldist/tensor.hpp"

namespace voldist {

// On-disk model format:
//   bytes 0..7   magic "VDCKPT01"
//   bytes 8..15  manifest length, u64 little-endian
//   manifest     UTF-8 JSON: {"tensors": [{"name", "shape", "offset"}...],
//                             "config": {...}, "param_count": N}
//   payload      raw float64 values, little-endian, in manifest order
// Offsets count float64 elements from the start of the payload. Values
// round-trip bit-exactly.
inline constexpr char kCheckpointMagic[8] = {'V', 'D', 'C', 'K', 'P', 'T', '0', '1'};

struct CheckpointEntry {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json config;
  std::uint64_t param_count = 0;
  std::vector<std::string> order;  // manifest order of tensor names
  std::map<std::string, CheckpointEntry> tensors;
};

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw FormatError("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64_le(std::ostream& os, const std::vector<double>& v) {
  static_assert(sizeof(double) == 8);
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64_le(os, bits);
  }
}

inline std::vector<double> read_f64_le(std::istream& is, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw FormatError("checkpoint: truncated payload");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
    std::memcpy(&out[i], &bits, 8);
  }
  return out;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& name : ckpt.order) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      throw ContractError("save_checkpoint: order lists unknown tensor '" + name + "'");
    }
    const auto& entry = it->second;
    if (shape_numel(entry.shape) != entry.values.size()) {
      throw ContractError("save_checkpoint: shape/value mismatch for '" + name + "'");
    }
    nlohmann::json t;
    t["name"] = name;
    t["shape"] = entry.shape;
    t["offset"] = offset;
    manifest["tensors"].push_back(std::move(t));
    offset += entry.values.size();
  }
  if (ckpt.order.size() != ckpt.tensors.size()) {
    throw ContractError("save_checkpoint: order does not cover all tensors");
  }
  manifest["config"] = ckpt.config;
  manifest["param_count"] = ckpt.param_count;

  const std::string mtext = manifest.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_checkpoint: cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, 8);
  detail::write_u64_le(os, mtext.size());
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& name : ckpt.order) detail::write_f64_le(os, ckpt.tensors.at(name).values);
  os.flush();
  if (!os) throw IoError("save_checkpoint: write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError("load_checkpoint: bad magic in '" + path + "'");
  }
  const std::uint64_t mlen = detail::read_u64_le(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw FormatError("load_checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mtext);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_checkpoint: manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw FormatError("load_checkpoint: manifest lacks tensor table");
  }
  Checkpoint ckpt;
  ckpt.config = manifest.value("config", nlohmann::json::object());
  ckpt.param_count = manifest.value("param_count", std::uint64_t{0});
  std::uint64_t expect_offset = 0;
  for (const auto& t : manifest["tensors"]) {
    if (!t.contains("name") || !t.contains("shape") || !t.contains("offset")) {
      throw FormatError("load_checkpoint: malformed tensor record");
    }
    const std::string name = t["name"].get<std::string>();
    const Shape shape = t["shape"].get<Shape>();
    const std::uint64_t offset = t["offset"].get<std::uint64_t>();
    if (offset != expect_offset) {
      throw FormatError("load_checkpoint: non-contiguous offset for '" + name + "'");
    }
    if (ckpt.tensors.count(name)) {
      throw FormatError("load_checkpoint: duplicate tensor '" + name + "'");
    }
    CheckpointEntry entry;
    entry.shape = shape;
    entry.values = detail::read_f64_le(is, shape_numel(shape));
    expect_offset += entry.values.size();
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, std::move(entry));
  }
  return ckpt;
}

}  // namespace voldist
