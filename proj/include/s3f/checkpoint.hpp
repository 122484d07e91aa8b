#pragma once

// "S3FC" checkpoints: magic, u32 version, u32 length + JSON blob, u32 tensor
// count, then per tensor u32 name length, name, u32 ndim, u32 dims, f32 data.
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "s3f/csv.hpp"
#include "s3f/errors.hpp"
#include "s3f/model.hpp"
#include "s3f/protein_io.hpp"

namespace s3f {

inline constexpr char kCheckpointMagic[4] = {'S', '3', 'F', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Matrix> tensors;
};

inline std::string encode_checkpoint(const Checkpoint& c) {
  using detail::put_f32;
  using detail::put_u32;
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const auto blob = c.meta.dump();
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out += blob;
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (Index i = 0; i < t.size(); ++i) {
      const double v = t.data()[i];
      if (!std::isfinite(v)) throw NumericalError("checkpoint: tensor '" + name + "' holds a non-finite value");
      put_f32(out, static_cast<float>(v));
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view in, const std::string& origin = "<checkpoint>") {
  using detail::get_f32;
  using detail::get_u32;
  std::size_t at = 0;
  const auto need = [&](std::size_t n) {
    if (at > in.size() || in.size() - at < n) throw DataError(origin + ": truncated checkpoint");
  };
  need(8);
  if (in.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) throw DataError(origin + ": checkpoint magic mismatch");
  if (get_u32(in, 4) != kCheckpointVersion) throw DataError(origin + ": unsupported checkpoint version");
  at = 8;
  need(4);
  const auto blob_len = get_u32(in, at);
  at += 4;
  need(blob_len);
  Checkpoint c;
  try {
    c.meta = nlohmann::json::parse(in.substr(at, blob_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": bad checkpoint metadata: " + e.what());
  }
  at += blob_len;
  need(4);
  const auto count = get_u32(in, at);
  at += 4;
  for (std::uint32_t k = 0; k < count; ++k) {
    need(4);
    const auto name_len = get_u32(in, at);
    at += 4;
    need(name_len);
    std::string name(in.substr(at, name_len));
    at += name_len;
    need(4);
    const auto ndim = get_u32(in, at);
    at += 4;
    if (ndim < 1 || ndim > 2) throw DataError(origin + ": tensor '" + name + "' has unsupported rank");
    need(4 * ndim);
    const Index rows = get_u32(in, at);
    const Index cols = ndim == 2 ? static_cast<Index>(get_u32(in, at + 4)) : 1;
    at += 4 * ndim;
    need(static_cast<std::size_t>(4 * rows * cols));
    Matrix t(rows, cols);
    for (Index i = 0; i < t.size(); ++i, at += 4) t.data()[i] = get_f32(in, at);
    if (!c.tensors.emplace(std::move(name), std::move(t)).second)
      throw DataError(origin + ": duplicate tensor in checkpoint");
  }
  if (at != in.size()) throw DataError(origin + ": trailing bytes after checkpoint");
  return c;
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path), path); }

inline void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file(path, encode_checkpoint(c)); }

/// Rebuilds a model from a checkpoint's "model" config and parameter tensors.
inline Model model_from_checkpoint(const Checkpoint& c) {
  if (!c.meta.contains("model")) throw DataError("checkpoint has no model configuration");
  Model m;
  try {
    m.config = c.meta.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint model configuration unreadable: ") + e.what());
  }
  const auto ref = init_model(m.config, 0);
  for (const auto& [name, t] : ref.params) {
    const auto it = c.tensors.find(name);
    if (it == c.tensors.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
      throw DataError("checkpoint tensor '" + name + "' has the wrong shape");
    m.params[name] = it->second;
  }
  return m;
}

}  // namespace s3f
