#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "smart/config_io.hpp"
#include "smart/training.hpp"

namespace smart {

struct PathsConfig {
  std::string dataset = "data";
  std::string run_dir = "runs/default";
  /// Checkpoint to start SCST fine-tuning from; empty means <run_dir>/model.ckpt.
  std::string init_checkpoint;
};

/// Everything a run needs. Every field has a default.
struct RunConfig {
  ModelConfig model;
  ScheduleConfig schedule;
  AdamConfig adam;
  ScstConfig scst;
  TrainOptions train;
  DatasetConfig dataset;
  PathsConfig paths;
  std::uint64_t seed = 1;

  void validate() const;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j, const RunConfig& defaults = {});

/// Sets the value at a dotted path ("model.d") inside a JSON object. The raw
/// text is parsed as JSON when possible and kept as a string otherwise.
void apply_override(Json& config, std::string_view dotted_key, std::string_view raw_value);

/// defaults < config file < overrides ("key=value" or "--key=value") <
/// SMART_SEED (when `env_seed` is non-null). The result is validated.
RunConfig resolve_run_config(const std::optional<std::filesystem::path>& file,
                             std::span<const std::string> overrides,
                             const char* env_seed = nullptr);

}  // namespace smart
