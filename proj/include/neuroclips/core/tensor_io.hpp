#pragma once

// TensorContainer file format (".tns"):
//   bytes 0..7   magic "NCTENSR1"
//   bytes 8..15  header length L, unsigned 64-bit little-endian
//   next L bytes UTF-8 JSON {"dtype":"f32"|"f64","shape":[...],"order":"C"}
//   payload      product(shape) little-endian IEEE-754 values, row-major

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "neuroclips/core/tensor.hpp"

namespace neuroclips {

enum class DType { F32, F64 };

struct TensorContainer {
  DType dtype = DType::F64;
  Tensor tensor;
};

std::size_t dtype_size(DType d);

void save_tensor(const TensorContainer& container, const std::filesystem::path& path);
TensorContainer load_tensor(const std::filesystem::path& path);

/// Shorthands for the common f64 case.
void save_tensor(const Tensor& t, const std::filesystem::path& path, DType dtype = DType::F64);
Tensor load_tensor_values(const std::filesystem::path& path);

/// A directory holding named tensors plus `manifest.json`.
struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  const Tensor& get(const std::string& name) const;
  /// Content hash over tensor names, shapes and values (order-independent of
  /// insertion; map ordering is lexicographic).
  std::string content_hash() const;
};

/// Writes tensors as `<name>.tns` and the manifest with "content_hash" added.
void save_checkpoint(const std::filesystem::path& dir, Checkpoint ckpt);
/// Throws NotReady if the directory or its manifest is missing.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Pretty-printed JSON with trailing newline, written atomically enough for
/// our purposes (truncate + write).
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace neuroclips
