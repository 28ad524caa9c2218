#pragma once

// Checkpoint container:
//   8 bytes   magic "NAFCKPT1"
//   8 bytes   little-endian uint64 header length L
//   L bytes   UTF-8 JSON header {"version", "dtype", "tensors": [{module, name, shape}], "extra"}
//   ...       little-endian float32 payload, tensors in header order

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "naf/numcore/tensor.hpp"

namespace naf {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'N', 'A', 'F', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string module;
  std::string name;
  Tensor<float> tensor;
};

struct StoredTensor {
  std::string module;
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json header;
  std::vector<StoredTensor> tensors;

  const nlohmann::json& extra() const { return header.at("extra"); }

  const StoredTensor* find(const std::string& module, const std::string& name) const {
    for (const auto& t : tensors)
      if (t.module == module && t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

inline std::uint64_t to_little64(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return (static_cast<std::uint64_t>(to_little(static_cast<std::uint32_t>(v))) << 32) |
         to_little(static_cast<std::uint32_t>(v >> 32));
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["dtype"] = "f32";
  header["tensors"] = nlohmann::json::array();
  for (const auto& e : entries)
    header["tensors"].push_back({{"module", e.module}, {"name", e.name}, {"shape", e.tensor.shape()}});
  header["extra"] = extra;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic, 8);
  const std::uint64_t len = detail::to_little64(text.size());
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : entries)
    for (float v : e.tensor.data()) {
      std::uint32_t bits = detail::to_little(std::bit_cast<std::uint32_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, 8)) throw CheckpointError("truncated checkpoint (no magic): " + path.string());
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("bad checkpoint magic: " + path.string());
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), 8)) throw CheckpointError("truncated checkpoint header: " + path.string());
  len = detail::to_little64(len);
  if (len > (1ull << 30)) throw CheckpointError("implausible checkpoint header length: " + path.string());
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw CheckpointError("truncated checkpoint header: " + path.string());

  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (ck.header.value("version", -1) != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version in " + path.string());
  if (ck.header.value("dtype", std::string()) != "f32") throw CheckpointError("unsupported checkpoint dtype");
  if (!ck.header.contains("extra")) ck.header["extra"] = nlohmann::json::object();

  for (const auto& t : ck.header.at("tensors")) {
    StoredTensor st{t.at("module").get<std::string>(), t.at("name").get<std::string>(),
                    t.at("shape").get<Shape>(), {}};
    st.data.resize(numel(st.shape));
    for (auto& v : st.data) {
      std::uint32_t bits;
      if (!in.read(reinterpret_cast<char*>(&bits), 4))
        throw CheckpointError("truncated checkpoint payload at " + st.module + "/" + st.name);
      v = std::bit_cast<float>(detail::to_little(bits));
    }
    ck.tensors.push_back(std::move(st));
  }
  return ck;
}

// Copies stored values into the given tensors, matching by module and name.
inline void restore_checkpoint(const Checkpoint& ck, std::vector<CheckpointEntry>& targets) {
  for (auto& t : targets) {
    const auto* st = ck.find(t.module, t.name);
    if (!st) throw CheckpointError("checkpoint is missing tensor " + t.module + "/" + t.name);
    if (st->shape != t.tensor.shape())
      throw CheckpointError("shape mismatch for " + t.module + "/" + t.name + ": stored " + shape_str(st->shape) +
                            ", expected " + shape_str(t.tensor.shape()));
    auto dst = t.tensor.mutable_data();
    std::copy(st->data.begin(), st->data.end(), dst.begin());
  }
}

}  // namespace naf
