#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nhfm/data.hpp"
#include "nhfm/model.hpp"
#include "nhfm/training.hpp"

namespace nhfm::cli {

namespace fs = std::filesystem;

enum class SourceKind { kMovieLens, kGeneric, kSynthetic };

struct DataSource {
  SourceKind kind = SourceKind::kSynthetic;
  fs::path path;                    // MovieLens directory or JSONL file
  std::vector<FieldConfig> fields;  // generic sources only
  SyntheticSpec synthetic;
  std::uint64_t synthetic_seed = 0;
  std::size_t t_max = 10;
  SplitRatios ratios;
};

/// One structured config file plus dotted-path overrides. `text` is the file
/// as read; `json` is the effective config after overrides.
struct RunConfig {
  std::string text;
  nlohmann::json json;

  DataSource data;
  std::optional<fs::path> dataset;  // preprocessed directory
  std::optional<fs::path> out;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<Variant> variants = {Variant::kFull};
  double fpr_ceiling = 0.01;

  static RunConfig parse(const nlohmann::json& j);
};

/// Sets `dotted.path=value` in `j`; the value is parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

RunConfig load_run_config(const std::optional<fs::path>& path,
                          const std::vector<std::string>& overrides);

/// Creates `dir`, or requires it to be empty. With `force`, existing
/// contents are removed first.
void prepare_output_dir(const fs::path& dir, bool force);

struct SplitStats {
  std::size_t sequences = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct PreprocessStats {
  SplitStats train, valid, test;
  std::size_t fields = 0;
  std::size_t features = 0;
  std::size_t events = 0;  // raw records ingested

  nlohmann::json to_json() const;
  std::string table() const;
};

PreprocessStats cmd_preprocess(const RunConfig& config, const fs::path& out, bool force,
                               std::ostream& log);

struct LoadedData {
  std::shared_ptr<const FeatureSchema> schema;
  Dataset train, valid, test;
  const Dataset& split(SplitTag tag) const;
};

LoadedData load_preprocessed(const fs::path& dir);

void cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out, bool force,
               std::ostream& log);

/// Full command-line entry point; returns the process exit code
/// (0 ok, 1 usage, 2 data, 3 numerical).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nhfm::cli
