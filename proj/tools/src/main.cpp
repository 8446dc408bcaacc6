#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedprobe/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace fedprobe::cli;

  CLI::App app{"Federated learning backdoor lab"};
  app.require_subcommand(1);

  std::string run_config;
  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("config", run_config, "Config file")->required()->check(CLI::ExistingFile);

  std::string arch = "mlp";
  std::uint64_t seed = 0;
  std::string corrupt;
  auto* grad = app.add_subcommand("gradcheck", "Compare backprop against finite differences");
  grad->add_option("--arch", arch, "mlp or cnn")->check(CLI::IsMember({"mlp", "cnn"}));
  grad->add_option("--seed", seed, "Seed");
  grad->add_option("--corrupt", corrupt)->group("");  // test hook, layer:kind

  std::string sweep_config;
  std::string axis;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "Run one experiment per axis value");
  sweep->add_option("config", sweep_config, "Config file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", axis, "malicious_clients, learning_rate or malicious_rate")
      ->required();
  sweep->add_option("--values", values, "Comma-separated values")
      ->required()
      ->delimiter(',')
      ->expected(0, -1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*run) return cmd_run(run_config, std::cout, std::cerr);
  if (*grad) {
    std::optional<fedprobe::WeightGroup> group;
    if (!corrupt.empty()) {
      try {
        group = parse_group(corrupt);
      } catch (const std::exception& e) {
        std::cerr << "config error: --corrupt: " << e.what() << '\n';
        return kExitConfig;
      }
    }
    return cmd_gradcheck(arch == "cnn" ? ArchPreset::kCnn : ArchPreset::kMlp, seed, group,
                         std::cout, std::cerr);
  }
  std::erase_if(values, [](const std::string& v) { return v.empty(); });
  return cmd_sweep(sweep_config, axis, values, std::cout, std::cerr);
}
