#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "neuroclips/core/tensor.hpp"

namespace neuroclips {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

/// Incremental SHA-256 for hashing several buffers as one stream.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const unsigned char> bytes);
  void update(std::string_view text);
  void update(const Tensor& t);
  std::string hex();

 private:
  void* ctx_;
};

}  // namespace neuroclips
