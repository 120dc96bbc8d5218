#pragma once

// Keyed random streams. Every randomized operation derives its engine from
// (master seed, purpose tag, integer keys...) so results never depend on call
// order or on how work is scheduled across threads.

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace fedbeat::rng {

using Engine = std::mt19937_64;

enum class Purpose : std::uint64_t {
  blobs = 1,
  noise_projection = 2,
  noise_rate = 3,
  noise_draw = 4,
  partition = 5,
  init_classifier = 6,
  init_transition = 7,
  local_shuffle = 8,
  participation = 9,
  ensemble = 10,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t key) noexcept {
  return splitmix64(h ^ splitmix64(key + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive(std::uint64_t seed, Purpose purpose,
                            std::initializer_list<std::uint64_t> keys = {}) noexcept {
  std::uint64_t h = combine(splitmix64(seed), static_cast<std::uint64_t>(purpose));
  for (auto k : keys) h = combine(h, k);
  return h;
}

inline Engine stream(std::uint64_t seed, Purpose purpose,
                     std::initializer_list<std::uint64_t> keys = {}) {
  const std::uint64_t h = derive(seed, purpose, keys);
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Engine(seq);
}

/// Hash of a feature vector's exact bit pattern.
inline std::uint64_t hash_features(std::span<const double> x) noexcept {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (double v : x) h = combine(h, std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v));
  return h;
}

}  // namespace fedbeat::rng
