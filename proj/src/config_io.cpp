#include "smart/config_io.hpp"

#include <fstream>
#include <sstream>

namespace smart {

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& value) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << value.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

FieldReader::FieldReader(const Json& object, std::string section)
    : object_(object), section_(std::move(section)) {
  if (!object_.is_object()) throw ConfigError(section_ + ": expected a JSON object");
}

void FieldReader::finish() const {
  for (const auto& [key, value] : object_.items()) {
    if (!seen_.count(key)) throw ConfigError(section_ + "." + key + ": unknown field");
  }
}

Json to_json(const ModelConfig& c) {
  return Json{{"n_enc_layers", c.n_enc_layers},
              {"n_dec_layers", c.n_dec_layers},
              {"d", c.d},
              {"heads", c.heads},
              {"d_ff", c.d_ff},
              {"memory_slots", c.memory_slots},
              {"vocab_size", c.vocab_size},
              {"max_seq_len", c.max_seq_len},
              {"region_feature_dim", c.region_feature_dim},
              {"dropout_keep", c.dropout_keep}};
}

ModelConfig model_config_from_json(const Json& j, const ModelConfig& defaults) {
  ModelConfig c = defaults;
  FieldReader r(j, "model");
  r.read("n_enc_layers", c.n_enc_layers);
  r.read("n_dec_layers", c.n_dec_layers);
  r.read("d", c.d);
  r.read("heads", c.heads);
  r.read("d_ff", c.d_ff);
  r.read("memory_slots", c.memory_slots);
  r.read("vocab_size", c.vocab_size);
  r.read("max_seq_len", c.max_seq_len);
  r.read("region_feature_dim", c.region_feature_dim);
  r.read("dropout_keep", c.dropout_keep);
  r.finish();
  return c;
}

Json to_json(const DatasetConfig& c) {
  return Json{{"seed", c.seed},
              {"num_scenes", c.num_scenes},
              {"region_feature_dim", c.region_feature_dim},
              {"min_objects", c.min_objects},
              {"max_objects", c.max_objects},
              {"classes", c.classes},
              {"synonyms", c.synonyms},
              {"feature_noise", c.feature_noise},
              {"area_min", c.area_min},
              {"area_max", c.area_max},
              {"captions_per_scene", c.captions_per_scene},
              {"word_vector_dim", c.word_vector_dim},
              {"synonym_perturbation", c.synonym_perturbation}};
}

DatasetConfig dataset_config_from_json(const Json& j, const DatasetConfig& defaults) {
  DatasetConfig c = defaults;
  FieldReader r(j, "dataset");
  r.read("seed", c.seed);
  r.read("num_scenes", c.num_scenes);
  r.read("region_feature_dim", c.region_feature_dim);
  r.read("min_objects", c.min_objects);
  r.read("max_objects", c.max_objects);
  r.read("classes", c.classes);
  r.read("synonyms", c.synonyms);
  r.read("feature_noise", c.feature_noise);
  r.read("area_min", c.area_min);
  r.read("area_max", c.area_max);
  r.read("captions_per_scene", c.captions_per_scene);
  r.read("word_vector_dim", c.word_vector_dim);
  r.read("synonym_perturbation", c.synonym_perturbation);
  r.finish();
  return c;
}

}  // namespace smart
