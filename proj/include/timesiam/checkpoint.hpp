#pragma once

// Binary checkpoint container:
//   "TSIA" | u32 version | u64 length + config text | u64 length + tensor table
// The tensor table holds u32 count, then per tensor: u32 name length, name,
// u32 ndims, i32 dims, u64 value count, float32 little-endian values.
// Training metadata rides in the config text under meta.* keys; fine-tuned
// artifacts add head.* / finetune.* entries the base loader ignores.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "timesiam/common.hpp"
#include "timesiam/model.hpp"

namespace timesiam {

class CheckpointError : public DataError {
 public:
  enum class Kind { bad_magic, bad_version, truncated, shape_mismatch };

  CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct CheckpointMeta {
  long epoch = 0;
  double final_loss = 0.0;
  uint64_t seed = 0;
};

struct RawTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<float> values;
};

// A checkpoint as read from disk, before any model is constructed.
struct RawCheckpoint {
  std::map<std::string, std::string> config;  // dotted keys, incl. meta.*
  std::vector<RawTensor> tensors;

  const RawTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

constexpr char kMagic[4] = {'T', 'S', 'I', 'A'};
constexpr uint32_t kVersion = 1;

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

// Cursor over an in-memory checkpoint image; every read checks bounds and
// reports truncation with the section being read.
struct ByteReader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("truncated checkpoint while reading ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32(const char* what) {
    uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::string config_map_to_text(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

inline std::map<std::string, std::string> config_text_to_map(const std::string& text) {
  std::map<std::string, std::string> kv;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw CheckpointError(CheckpointError::Kind::truncated,
                            "malformed checkpoint config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace detail

// Serializes config + named float tensors into the container format.
inline void write_checkpoint_raw(const std::string& path, const RawCheckpoint& raw) {
  std::string out;
  out.append(detail::kMagic, 4);
  detail::put_u32(out, detail::kVersion);

  const std::string cfg_text = detail::config_map_to_text(raw.config);
  detail::put_u64(out, cfg_text.size());
  out += cfg_text;

  std::string table;
  detail::put_u32(table, static_cast<uint32_t>(raw.tensors.size()));
  for (const auto& t : raw.tensors) {
    detail::put_u32(table, static_cast<uint32_t>(t.name.size()));
    table += t.name;
    detail::put_u32(table, static_cast<uint32_t>(t.dims.size()));
    for (int d : t.dims) detail::put_u32(table, static_cast<uint32_t>(d));
    detail::put_u64(table, t.values.size());
    for (float v : t.values) detail::put_f32(table, v);
  }
  detail::put_u64(out, table.size());
  out += table;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("short write to checkpoint: " + path);
}

// Reads and validates the container; magic and version are checked before
// anything else is touched.
inline RawCheckpoint read_checkpoint_raw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  detail::ByteReader r{buf};
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), detail::kMagic, 4) != 0)
    throw CheckpointError(CheckpointError::Kind::bad_magic,
                          path + ": not a checkpoint (bad magic bytes)");
  const uint32_t version = r.u32("version");
  if (version != detail::kVersion)
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          path + ": unsupported checkpoint version " +
                              std::to_string(version) + " (expected " +
                              std::to_string(detail::kVersion) + ")");

  const uint64_t cfg_len = r.u64("config length");
  RawCheckpoint raw;
  raw.config = detail::config_text_to_map(r.bytes(cfg_len, "config text"));

  const uint64_t table_len = r.u64("table length");
  r.need(table_len, "tensor table");
  const size_t table_end = r.pos + table_len;

  const uint32_t count = r.u32("tensor count");
  raw.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    RawTensor t;
    const uint32_t name_len = r.u32("tensor name length");
    t.name = r.bytes(name_len, "tensor name");
    const uint32_t ndims = r.u32("tensor rank");
    size_t expect = 1;
    for (uint32_t d = 0; d < ndims; ++d) {
      const int dim = static_cast<int>(r.u32("tensor dims"));
      t.dims.push_back(dim);
      expect *= static_cast<size_t>(dim);
    }
    const uint64_t n = r.u64("tensor value count");
    if (n != expect)
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            path + ": tensor '" + t.name + "' declares " +
                                std::to_string(n) + " values but dims imply " +
                                std::to_string(expect));
    r.need(n * 4, "tensor values");
    t.values.resize(n);
    for (uint64_t j = 0; j < n; ++j) t.values[j] = r.f32("tensor values");
    raw.tensors.push_back(std::move(t));
  }
  if (r.pos != table_end)
    throw CheckpointError(CheckpointError::Kind::truncated,
                          path + ": tensor table length does not match its contents");
  return raw;
}

// ---------------------------------------------------------------------------
// Model-level save / load.

inline std::map<std::string, std::string> checkpoint_config_map(const ModelConfig& cfg,
                                                                const CheckpointMeta& meta) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : model_config_entries(cfg)) kv[k] = v;
  kv["meta.epoch"] = std::to_string(meta.epoch);
  {
    std::ostringstream os;
    os.precision(17);
    os << meta.final_loss;
    kv["meta.final_loss"] = os.str();
  }
  kv["meta.seed"] = std::to_string(meta.seed);
  return kv;
}

inline ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  for (const auto& [k, v] : kv) {
    if (k.rfind("model.", 0) == 0) {
      if (!model_config_apply(cfg, k, v))
        throw ConfigError("unknown model key '" + k + "' in checkpoint");
    }
  }
  cfg.validate();
  return cfg;
}

inline CheckpointMeta meta_from_map(const std::map<std::string, std::string>& kv) {
  CheckpointMeta meta;
  try {
    if (auto it = kv.find("meta.epoch"); it != kv.end())
      meta.epoch = std::stol(it->second);
    if (auto it = kv.find("meta.final_loss"); it != kv.end())
      meta.final_loss = std::stod(it->second);
    if (auto it = kv.find("meta.seed"); it != kv.end())
      meta.seed = std::stoull(it->second);
  } catch (const std::exception&) {
    throw DataError("checkpoint has malformed meta.* entries");
  }
  return meta;
}

// Saves the model's parameters (and optional extra tensors such as a
// fine-tuned head) into one checkpoint file.
inline void save_checkpoint(const std::string& path, SiameseModel<float>& model,
                            const CheckpointMeta& meta,
                            const std::vector<RawTensor>& extra_tensors = {},
                            const std::map<std::string, std::string>& extra_config = {}) {
  RawCheckpoint raw;
  raw.config = checkpoint_config_map(model.cfg, meta);
  for (const auto& [k, v] : extra_config) raw.config[k] = v;
  for (auto& [name, t] : model.named_parameters()) {
    RawTensor rt;
    rt.name = name;
    rt.dims = t.dims();
    rt.values = t.values();
    raw.tensors.push_back(std::move(rt));
  }
  for (const auto& t : extra_tensors) raw.tensors.push_back(t);
  write_checkpoint_raw(path, raw);
}

struct LoadedCheckpoint {
  SiameseModel<float> model;
  CheckpointMeta meta;
  RawCheckpoint raw;  // kept for head.* tensors and finetune.* config keys
};

namespace detail {

inline void fill_model_from_raw(SiameseModel<float>& model, const RawCheckpoint& raw,
                                const std::string& path) {
  for (auto& [name, t] : model.named_parameters()) {
    const RawTensor* rt = raw.find(name);
    if (!rt)
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            path + ": tensor '" + name + "' missing from checkpoint");
    if (rt->dims != t.dims()) {
      auto dim_str = [](const std::vector<int>& d) {
        std::string s = "[";
        for (size_t i = 0; i < d.size(); ++i) s += (i ? "x" : "") + std::to_string(d[i]);
        return s + "]";
      };
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            path + ": tensor '" + name + "' has shape " +
                                dim_str(rt->dims) + ", expected " + dim_str(t.dims()));
    }
    t.values() = rt->values;
  }
}

}  // namespace detail

// Loads a checkpoint using the configuration stored inside it.
inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint out{SiameseModel<float>{}, CheckpointMeta{}, read_checkpoint_raw(path)};
  const ModelConfig cfg = model_config_from_map(out.raw.config);
  out.meta = meta_from_map(out.raw.config);
  out.model = build_model<float>(cfg, 0);
  detail::fill_model_from_raw(out.model, out.raw, path);
  return out;
}

// Loads a checkpoint that must match `want`; the first tensor whose shape
// disagrees (or is missing) is named in the error.
inline LoadedCheckpoint load_checkpoint_expect(const std::string& path,
                                               const ModelConfig& want) {
  LoadedCheckpoint out{SiameseModel<float>{}, CheckpointMeta{}, read_checkpoint_raw(path)};
  out.meta = meta_from_map(out.raw.config);
  out.model = build_model<float>(want, 0);
  detail::fill_model_from_raw(out.model, out.raw, path);
  return out;
}

}  // namespace timesiam
