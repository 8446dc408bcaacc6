#pragma once

#include <cstdint>

namespace fedprobe {

/// Independent random streams derived from one global seed. Each purpose gets
/// its own stream so that changing one factor of an experiment (say, the
/// learning rate) leaves data, partition, and initialization untouched.
enum class Stream : std::uint64_t {
  kInit = 1,
  kServerShuffle = 2,
  kClientShuffle = 3,
  kPartition = 4,
  kTrigger = 5,
  kSyntheticTrain = 6,
  kSyntheticTest = 7,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// seed' = mix(mix(mix(global ^ stream) ^ a) ^ b)
constexpr std::uint64_t derive_seed(std::uint64_t global, Stream stream,
                                    std::uint64_t a = 0,
                                    std::uint64_t b = 0) noexcept {
  std::uint64_t s = mix64(global ^ (static_cast<std::uint64_t>(stream) << 56));
  s = mix64(s ^ a);
  return mix64(s ^ (b * 0xd6e8feb86659fd93ULL));
}

}  // namespace fedprobe
