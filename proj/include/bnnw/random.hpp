#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace bnnw {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent substreams from a master seed.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for the substream named `tag` with integer coordinates `ids`. Pure function of its inputs,
/// so work items can run in any order and still see the same stream.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                    std::initializer_list<std::uint64_t> ids = {}) {
  std::uint64_t s = mix64(master ^ hash_tag(tag));
  for (auto id : ids) s = mix64(s ^ mix64(id + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::string_view tag,
                    std::initializer_list<std::uint64_t> ids = {}) {
  return Rng(derive_seed(master, tag, ids));
}

}  // namespace bnnw
