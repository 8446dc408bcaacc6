#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fedprobe/cli/config.hpp"
#include "fedprobe/nn/gradcheck.hpp"

namespace fedprobe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckCase {
  std::string name;
  nn::Architecture architecture;
  Shape sample_shape;
  nn::LossKind loss = nn::LossKind::kCrossEntropy;
};

/// Reduced-width instances of a preset on 3x8x8 inputs, covering every layer
/// kind and activation the preset uses with both losses.
std::vector<GradCheckCase> gradcheck_cases(ArchPreset preset);

struct GradCheckOutcome {
  GradCheckCase test_case;
  nn::GradCheckReport report;
};

/// Seeded parameters, a batch of 3 uniform inputs and random labels per case.
/// `corrupt` perturbs the first analytic element of that group before the
/// comparison.
std::vector<GradCheckOutcome> run_gradcheck(ArchPreset preset, std::uint64_t seed,
                                            std::optional<WeightGroup> corrupt = {});

int cmd_run(const std::filesystem::path& config_path, std::ostream& out,
            std::ostream& err);

int cmd_gradcheck(ArchPreset preset, std::uint64_t seed,
                  std::optional<WeightGroup> corrupt, std::ostream& out,
                  std::ostream& err);

int cmd_sweep(const std::filesystem::path& config_path, const std::string& axis,
              const std::vector<std::string>& values, std::ostream& out,
              std::ostream& err);

/// "layer:kind", e.g. "2:bias".
WeightGroup parse_group(std::string_view text);

}  // namespace fedprobe::cli
