#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "json.hpp"
#include "smart/data.hpp"
#include "smart/errors.hpp"
#include "smart/model.hpp"

namespace smart {

using Json = nlohmann::json;

Json read_json_file(const std::filesystem::path& path);
/// Pretty-printed, trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& value);

/// Reads known keys of a JSON object into typed fields; unknown keys and
/// type mismatches raise ConfigError naming "<section>.<key>".
class FieldReader {
 public:
  FieldReader(const Json& object, std::string section);

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end() || it->is_null()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(section_ + "." + key + ": expected " + describe<T>() + ", got " +
                        it->dump());
    }
  }

  /// Throws on any key that was never read.
  void finish() const;
  const std::string& section() const { return section_; }

 private:
  template <typename T>
  static const char* describe() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "a value of the documented type";
  }

  const Json& object_;
  std::string section_;
  std::set<std::string> seen_;
};

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j, const ModelConfig& defaults = {});

Json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const Json& j, const DatasetConfig& defaults = {});

}  // namespace smart
