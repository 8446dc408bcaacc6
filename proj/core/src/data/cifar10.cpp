#include "fedprobe/data/cifar10.hpp"

#include <array>
#include <fstream>
#include <vector>

#include <fmt/format.h>

#include "fedprobe/error.hpp"

namespace fedprobe::data {

Dataset read_cifar10_batch(const std::filesystem::path& file) {
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(file, ec);
  if (ec) {
    throw DataError(fmt::format("cannot read CIFAR-10 file {}: {}", file.string(),
                                ec.message()));
  }
  if (bytes % kCifarRecordBytes != 0) {
    throw DataError(fmt::format(
        "CIFAR-10 file {} is {} bytes, not a multiple of the {}-byte record",
        file.string(), bytes, kCifarRecordBytes));
  }
  const std::size_t records = bytes / kCifarRecordBytes;

  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open CIFAR-10 file {}", file.string()));

  Dataset out{Tensor({records, kCifarChannels, kCifarSide, kCifarSide}),
              std::vector<std::size_t>(records), kCifarClasses};
  std::array<unsigned char, kCifarRecordBytes> record{};
  auto pixels = out.images.data();
  for (std::size_t r = 0; r < records; ++r) {
    if (!in.read(reinterpret_cast<char*>(record.data()), record.size())) {
      throw DataError(fmt::format("short read in {} at record {}", file.string(), r));
    }
    if (record[0] >= kCifarClasses) {
      throw DataError(fmt::format("record {} of {} has label byte {} (> 9)", r,
                                  file.string(), static_cast<int>(record[0])));
    }
    out.labels[r] = record[0];
    double* dst = pixels.data() + r * kCifarPixelBytes;
    for (std::size_t i = 0; i < kCifarPixelBytes; ++i) {
      dst[i] = static_cast<double>(record[1 + i]) / 255.0;
    }
  }
  return out;
}

CifarSplit load_cifar10(const std::filesystem::path& directory) {
  std::vector<Dataset> batches;
  for (int i = 1; i <= 5; ++i) {
    batches.push_back(
        read_cifar10_batch(directory / fmt::format("data_batch_{}.bin", i)));
  }
  return {concat(batches), read_cifar10_batch(directory / "test_batch.bin")};
}

}  // namespace fedprobe::data
