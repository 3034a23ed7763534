#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "invlens/tensor.hpp"

namespace invlens {

// xoshiro256** seeded through splitmix64. State transitions are integer-only,
// so a seed reproduces the same stream everywhere. Gaussians come from the
// Box-Muller transform applied to consecutive uniform pairs (u1, u2): the
// cosine branch is returned first, the sine branch is cached for the next
// call.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256**+splitmix64-seed+box-muller-pairs";

  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  double normal();

  Tensor normal_tensor(Shape shape);
  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  // Independent stream derived from this generator's seed and an index.
  // Does not advance this generator.
  Rng derive(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace invlens
