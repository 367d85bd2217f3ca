#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "masktab/data/date.hpp"
#include "masktab/data/synth.hpp"
#include "masktab/train/train.hpp"

namespace masktab::cli {

/// Where the data comes from. Without a labeled CSV the generator section
/// is used with the global seed.
struct DataSource {
  std::string schema;     // schema JSON, required with CSV inputs
  std::string labeled;    // CSV with labels and timestamps
  std::string unlabeled;  // CSV, optional
  std::vector<data::Date> boundaries{{2024, 7, 1}, {2024, 10, 1}};

  bool synthetic() const { return labeled.empty(); }
};

/// Resolved contents of a --config file. Every section is optional; every
/// key inside a section must be known.
struct CliConfig {
  std::uint64_t seed = 0;
  data::GeneratorConfig generator;
  DataSource data;
  train::RunConfig run;       // pretrain, ablate, sweep
  train::RunConfig finetune;  // run + "finetune" overrides
  train::RunConfig distill;   // run + "distill" overrides
  std::size_t student_top_k = 10;
  std::vector<std::string> variants;  // empty = the standard ladder
  std::size_t ablate_finetune_steps = 0;
  std::string sweep_axis = "unlabeled-ratio";
  std::vector<std::string> sweep_grid;  // empty = default grid
  std::size_t iv_bins = 10;

  /// `seed` (when given) replaces the file's global seed, which in turn
  /// seeds the generator and every run.
  static CliConfig from_json(const nlohmann::json& j, std::optional<std::uint64_t> seed = std::nullopt);
  static CliConfig load(const std::string& path, std::optional<std::uint64_t> seed = std::nullopt);
  nlohmann::json to_json() const;
  void validate() const;
};

nlohmann::json generator_to_json(const data::GeneratorConfig& g);

/// Runs the command line and returns the process exit code: 0 on success,
/// 2 on numeric errors, 1 on everything else (including usage errors).
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

}  // namespace masktab::cli
