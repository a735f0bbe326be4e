#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace couda {

/// Generator seeded from a run seed plus stream tags, so that every
/// consumer (peer init, sampling, shuffling...) has its own reproducible stream.
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace couda
