#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "mg2fn/error.hpp"
#include "mg2fn/experiment.hpp"

namespace {

int fail(const std::exception& e) {
  std::cerr << "error: " << e.what() << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MCTS-guided GFlowNet experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::size_t jobs = 1;
  std::vector<std::string> axes;

  auto* run = app.add_subcommand("run", "train every seed of a configuration");
  run->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory (defaults to output.directory)");
  run->add_option("--jobs", jobs, "seeds to run concurrently")->check(CLI::PositiveNumber);

  auto* ablate = app.add_subcommand("ablate", "run the Cartesian product of config overrides");
  ablate->add_option("--config", config_path, "base JSON configuration")->required()->check(CLI::ExistingFile);
  ablate->add_option("--axis", axes, "key=v1,v2,... (repeatable)");
  ablate->add_option("--out", out_dir, "output directory (defaults to output.directory)");
  ablate->add_option("--jobs", jobs, "seeds to run concurrently")->check(CLI::PositiveNumber);

  auto* check = app.add_subcommand("check", "validate a configuration and print it resolved");
  check->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*check) {
      const auto config = mg2fn::parse_config_file(config_path);
      std::cout << config.resolved.dump(2) << "\nconfig_hash " << config.hash() << '\n';
      return 0;
    }
    if (*run) {
      const auto config = mg2fn::parse_config_file(config_path);
      const std::filesystem::path out = out_dir.empty() ? config.output_directory : std::filesystem::path(out_dir);
      const auto summary = mg2fn::run(config, out, jobs);
      int failed = 0;
      for (const auto& s : summary.seeds) {
        std::cout << "seed " << s.seed << ' ' << (s.ok ? "ok" : "failed: " + s.error) << " modes "
                  << s.result.final_record.modes_found << " visits " << s.result.counters.trainer << '\n';
        failed += s.ok ? 0 : 1;
      }
      std::cout << "summary " << (out / "summary.json").string() << '\n';
      return failed == 0 ? 0 : 2;
    }
    if (*ablate) {
      std::ifstream in(config_path, std::ios::binary);
      nlohmann::json base;
      try {
        base = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw mg2fn::Error(mg2fn::ErrorCode::ParseError, e.what());
      }
      std::vector<mg2fn::AblationAxis> parsed;
      for (const auto& a : axes) parsed.push_back(mg2fn::parse_axis(a));
      const std::filesystem::path out =
          out_dir.empty() ? mg2fn::parse_config(base).output_directory : std::filesystem::path(out_dir);
      const auto runs = mg2fn::ablation_matrix(base, parsed, out, jobs);
      std::cout << runs.size() << " configurations; comparison " << (out / "comparison.csv").string() << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    return fail(e);
  }
  return 0;
}
