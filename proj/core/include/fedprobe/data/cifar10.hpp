#pragma once

#include <cstddef>
#include <filesystem>

#include "fedprobe/dataset.hpp"

namespace fedprobe::data {

// Binary layout: records of one label byte (0-9) followed by 3072 pixel bytes,
// 1024 red then 1024 green then 1024 blue, each plane row-major 32x32.
// No header, no delimiters.
inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarPixelBytes = kCifarChannels * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixelBytes;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;
inline constexpr std::size_t kCifarClasses = 10;

/// One batch file as a Dataset of [n, 3, 32, 32] images scaled by 1/255.
Dataset read_cifar10_batch(const std::filesystem::path& file);

struct CifarSplit {
  Dataset train;
  Dataset test;
};

/// Reads data_batch_1.bin .. data_batch_5.bin and test_batch.bin.
CifarSplit load_cifar10(const std::filesystem::path& directory);

}  // namespace fedprobe::data
