#include "smart/run_config.hpp"

#include <charconv>

namespace smart {

void RunConfig::validate() const {
  model.validate();
  schedule.validate();
  adam.validate();
  scst.validate();
  train.validate();
  dataset.validate();
  if (dataset.region_feature_dim != model.region_feature_dim) {
    throw ConfigError("model.region_feature_dim: " + std::to_string(model.region_feature_dim) +
                      " differs from dataset.region_feature_dim " +
                      std::to_string(dataset.region_feature_dim));
  }
  if (train.max_len > model.max_seq_len) {
    throw ConfigError("train.max_len: " + std::to_string(train.max_len) +
                      " exceeds model.max_seq_len " + std::to_string(model.max_seq_len));
  }
}

Json to_json(const RunConfig& c) {
  return Json{
      {"seed", c.seed},
      {"model", to_json(c.model)},
      {"schedule",
       {{"warmup", c.schedule.warmup},
        {"printed_exponent", c.schedule.printed_exponent},
        {"scale", c.schedule.scale}}},
      {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
      {"scst",
       {{"beam_size", c.scst.beam_size},
        {"lr", c.scst.lr},
        {"reward", c.scst.reward},
        {"steps", c.scst.steps},
        {"batch_size", c.scst.batch_size}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"steps", c.train.steps},
        {"eval_interval", c.train.eval_interval},
        {"checkpoint_interval", c.train.checkpoint_interval},
        {"max_len", c.train.max_len},
        {"split", c.train.split},
        {"max_examples", c.train.max_examples},
        {"max_eval_scenes", c.train.max_eval_scenes},
        {"precision", c.train.precision}}},
      {"dataset", to_json(c.dataset)},
      {"paths",
       {{"dataset", c.paths.dataset},
        {"run_dir", c.paths.run_dir},
        {"init_checkpoint", c.paths.init_checkpoint}}},
  };
}

RunConfig run_config_from_json(const Json& j, const RunConfig& defaults) {
  RunConfig c = defaults;
  FieldReader top(j, "config");
  top.read("seed", c.seed);
  Json model, schedule, adam, scst, train, dataset, paths;
  top.read("model", model);
  top.read("schedule", schedule);
  top.read("adam", adam);
  top.read("scst", scst);
  top.read("train", train);
  top.read("dataset", dataset);
  top.read("paths", paths);
  top.finish();

  if (!model.is_null()) c.model = model_config_from_json(model, c.model);
  if (!dataset.is_null()) c.dataset = dataset_config_from_json(dataset, c.dataset);
  if (!schedule.is_null()) {
    FieldReader r(schedule, "schedule");
    r.read("warmup", c.schedule.warmup);
    r.read("printed_exponent", c.schedule.printed_exponent);
    r.read("scale", c.schedule.scale);
    r.finish();
  }
  if (!adam.is_null()) {
    FieldReader r(adam, "adam");
    r.read("beta1", c.adam.beta1);
    r.read("beta2", c.adam.beta2);
    r.read("eps", c.adam.eps);
    r.finish();
  }
  if (!scst.is_null()) {
    FieldReader r(scst, "scst");
    r.read("beam_size", c.scst.beam_size);
    r.read("lr", c.scst.lr);
    r.read("reward", c.scst.reward);
    r.read("steps", c.scst.steps);
    r.read("batch_size", c.scst.batch_size);
    r.finish();
  }
  if (!train.is_null()) {
    FieldReader r(train, "train");
    r.read("batch_size", c.train.batch_size);
    r.read("steps", c.train.steps);
    r.read("eval_interval", c.train.eval_interval);
    r.read("checkpoint_interval", c.train.checkpoint_interval);
    r.read("max_len", c.train.max_len);
    r.read("split", c.train.split);
    r.read("max_examples", c.train.max_examples);
    r.read("max_eval_scenes", c.train.max_eval_scenes);
    r.read("precision", c.train.precision);
    r.finish();
  }
  if (!paths.is_null()) {
    FieldReader r(paths, "paths");
    r.read("dataset", c.paths.dataset);
    r.read("run_dir", c.paths.run_dir);
    r.read("init_checkpoint", c.paths.init_checkpoint);
    r.finish();
  }
  return c;
}

void apply_override(Json& config, std::string_view dotted_key, std::string_view raw_value) {
  if (dotted_key.empty()) throw UsageError("empty override key");
  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part(dotted_key.substr(start, dot == std::string_view::npos ? dotted_key.npos
                                                                                  : dot - start));
    if (part.empty()) throw UsageError("malformed override key '" + std::string(dotted_key) + "'");
    if (!node->is_object()) {
      throw ConfigError(std::string(dotted_key) + ": cannot descend into a non-object");
    }
    if (dot == std::string_view::npos) {
      Json value = Json::parse(raw_value, nullptr, /*allow_exceptions=*/false);
      if (value.is_discarded()) value = std::string(raw_value);
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

RunConfig resolve_run_config(const std::optional<std::filesystem::path>& file,
                             std::span<const std::string> overrides, const char* env_seed) {
  Json merged = to_json(RunConfig{});
  if (file) {
    if (!std::filesystem::exists(*file)) {
      throw ConfigError("config file not found: " + file->string());
    }
    Json from_file;
    try {
      from_file = read_json_file(*file);
    } catch (const InputError& e) {
      throw ConfigError(e.what());
    }
    if (!from_file.is_object()) throw ConfigError(file->string() + ": expected a JSON object");
    merged.merge_patch(from_file);
  }
  for (const auto& o : overrides) {
    std::string_view text = o;
    while (!text.empty() && text.front() == '-') text.remove_prefix(1);
    const std::size_t eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("override '" + o + "' must look like --section.key=value");
    }
    apply_override(merged, text.substr(0, eq), text.substr(eq + 1));
  }
  if (env_seed && *env_seed) {
    std::uint64_t seed = 0;
    const char* end = env_seed + std::char_traits<char>::length(env_seed);
    const auto [ptr, ec] = std::from_chars(env_seed, end, seed);
    if (ec != std::errc() || ptr != end) {
      throw ConfigError(std::string("SMART_SEED: not an unsigned integer: ") + env_seed);
    }
    merged["seed"] = seed;
  }
  RunConfig c = run_config_from_json(merged);
  c.validate();
  return c;
}

}  // namespace smart
