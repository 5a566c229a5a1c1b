// Seeded random source that can be split into independent named streams.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace jointud {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Child streams depend only on this stream's seed and the key, never on
  // how many numbers were drawn so far.
  Rng split(std::string_view name) const;
  Rng split(std::uint64_t key) const;

  double uniform();  // [0, 1)
  double normal(double mean, double stddev);
  std::uint64_t next() { return engine_(); }
  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_name(std::string_view name);

}  // namespace jointud
