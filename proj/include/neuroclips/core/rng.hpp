#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "neuroclips/core/tensor.hpp"

namespace neuroclips {

/// Mixes a master seed with a path of integer keys (splitmix64 chain), so
/// every (seed, stream, index) triple owns an independent RNG stream.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Beta(a, b) through the two-gamma construction.
  double beta(double a, double b);
  std::size_t index(std::size_t n);
  Tensor normal_tensor(Shape shape, double stddev = 1.0);
  std::vector<std::size_t> permutation(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Stream identifiers for derive_seed. Values are part of the on-disk
// determinism contract; do not renumber.
namespace stream {
inline constexpr std::uint64_t kClipParams = 1;
inline constexpr std::uint64_t kFmriNoise = 2;
inline constexpr std::uint64_t kEncoder = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kShuffle = 5;
inline constexpr std::uint64_t kMixco = 6;
inline constexpr std::uint64_t kKeyframe = 7;
inline constexpr std::uint64_t kDiffusion = 8;
inline constexpr std::uint64_t kEval = 9;
inline constexpr std::uint64_t kCodec = 10;
inline constexpr std::uint64_t kSplitTest = 11;
}  // namespace stream

}  // namespace neuroclips
