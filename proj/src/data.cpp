#include "smart/data.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "smart/config_io.hpp"
#include "smart/errors.hpp"
#include "smart/random.hpp"
#include "smart/tokens.hpp"

namespace smart {

Tensor Scene::region_tensor() const {
  if (num_regions() == 0) throw InputError("scene '" + id + "' has no regions");
  return Tensor({num_regions(), feature_dim}, regions);
}

// ---------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
}

void Vocabulary::add(const std::string& token) {
  if (ids_.count(token)) throw InputError("duplicate vocabulary token '" + token + "'");
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const std::string> captions) {
  std::map<std::string, std::size_t> counts;
  for (const auto& c : captions)
    for (auto& w : tokenize(c)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [word, count] : ordered) v.add(word);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open vocabulary: " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) throw InputError(path.string() + ":" + std::to_string(lineno) + ": empty token");
    v.add(line);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  for (std::size_t i = tokens::kNumReserved; i < tokens_.size(); ++i) os << tokens_[i] << '\n';
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? tokens::kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view caption) const {
  std::vector<int> ids;
  for (const auto& w : tokenize(caption)) ids.push_back(id(w));
  return ids;
}

Words Vocabulary::words(std::span<const int> ids) const {
  Words out;
  for (int t : ids) {
    if (t == tokens::kEos) break;
    if (t == tokens::kPad || t == tokens::kBos) continue;
    out.push_back(token(t));
  }
  return out;
}

// ------------------------------------------------------------ DatasetConfig

void DatasetConfig::validate() const {
  if (num_scenes == 0) throw ConfigError("dataset.num_scenes must be positive");
  if (region_feature_dim == 0) throw ConfigError("dataset.region_feature_dim must be positive");
  if (classes.empty()) throw ConfigError("dataset.classes must not be empty");
  std::set<std::string> unique;
  for (const auto& c : classes) {
    if (tokenize(c) != Words{c}) {
      throw ConfigError("dataset.classes: '" + c + "' must be a single lowercase word");
    }
    if (!unique.insert(c).second) throw ConfigError("dataset.classes: duplicate '" + c + "'");
  }
  if (min_objects == 0 || min_objects > max_objects) {
    throw ConfigError("dataset.min_objects must be in [1, max_objects]");
  }
  if (max_objects > classes.size()) {
    throw ConfigError("dataset.max_objects exceeds the number of classes");
  }
  if (!(feature_noise >= 0.0)) throw ConfigError("dataset.feature_noise must be >= 0");
  if (!(area_min >= 0.0 && area_min <= area_max && area_max <= 1.0)) {
    throw ConfigError("dataset.area_min/area_max must satisfy 0 <= min <= max <= 1");
  }
  if (captions_per_scene == 0 || captions_per_scene > 3) {
    throw ConfigError("dataset.captions_per_scene must be in [1, 3]");
  }
  if (word_vector_dim == 0 || word_vector_dim > region_feature_dim) {
    throw ConfigError("dataset.word_vector_dim must be in [1, region_feature_dim]");
  }
  for (const auto& [syn, cls] : synonyms) {
    if (!unique.count(cls)) {
      throw ConfigError("dataset.synonyms: '" + syn + "' maps to unknown class '" + cls + "'");
    }
    if (unique.count(syn)) throw ConfigError("dataset.synonyms: '" + syn + "' is already a class");
  }
  if (!(synonym_perturbation >= 0.0)) throw ConfigError("dataset.synonym_perturbation must be >= 0");
}

// ------------------------------------------------------------ word vectors

void WordVectorTable::set(const std::string& word, std::vector<double> v) {
  if (v.size() != dim_) {
    throw ShapeError("word vector for '" + word + "' has dim " + std::to_string(v.size()) +
                     ", table dim is " + std::to_string(dim_));
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw InputError("word vector for '" + word + "' is zero");
  for (double& x : v) x /= norm;
  vectors_[word] = std::move(v);
}

const std::vector<double>* WordVectorTable::find(std::string_view word) const {
  auto it = vectors_.find(word);
  return it == vectors_.end() ? nullptr : &it->second;
}

WordVectorTable WordVectorTable::load(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  try {
    WordVectorTable t(j.at("dim").get<std::size_t>());
    // Stored vectors are already unit length; renormalising would perturb the last bit.
    for (const auto& [word, vec] : j.at("vectors").items()) {
      auto v = vec.get<std::vector<double>>();
      if (v.size() != t.dim_) {
        throw InputError("word vector for '" + word + "' has dim " + std::to_string(v.size()) +
                         ", expected " + std::to_string(t.dim_));
      }
      t.vectors_[word] = std::move(v);
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed word vector file " + path.string() + ": " + e.what());
  }
}

void WordVectorTable::save(const std::filesystem::path& path) const {
  Json vectors = Json::object();
  for (const auto& [word, vec] : vectors_) vectors[word] = vec;
  write_json_file(path, Json{{"dim", dim_}, {"vectors", vectors}});
}

// ------------------------------------------------------------- generation

namespace {

constexpr const char* kConnectors[] = {"next to", "with", "near"};

std::string make_caption(const std::vector<std::string>& nouns, std::size_t template_index) {
  std::string s = "a " + nouns[0];
  for (std::size_t i = 1; i < nouns.size(); ++i) {
    s += i == 1 ? std::string(" ") + kConnectors[template_index] + " a " : std::string(" and a ");
    s += nouns[i];
  }
  return s;
}

double as_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

SyntheticDataset generate_synthetic(const DatasetConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t f = config.region_feature_dim;
  const std::size_t num_classes = config.classes.size();

  std::vector<std::vector<double>> prototypes(num_classes, std::vector<double>(f));
  for (auto& p : prototypes)
    for (double& x : p) x = rng.normal();

  SyntheticDataset out;
  out.word_vectors = WordVectorTable(config.word_vector_dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    out.word_vectors.set(config.classes[c], std::vector<double>(prototypes[c].begin(),
                                                                prototypes[c].begin() +
                                                                    static_cast<long>(config.word_vector_dim)));
  }
  for (const auto& [syn, cls] : config.synonyms) {
    std::vector<double> v = *out.word_vectors.find(cls);
    for (double& x : v) x += config.synonym_perturbation * rng.normal();
    out.word_vectors.set(syn, std::move(v));
  }
  for (const auto& [word, vec] : out.word_vectors.entries()) out.lexicon.push_back(word);

  std::vector<std::size_t> order(num_classes);
  for (std::size_t s = 0; s < config.num_scenes; ++s) {
    Scene scene;
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%05zu", s);
    scene.id = id;
    scene.feature_dim = f;
    const std::size_t n = config.min_objects + rng.below(config.max_objects - config.min_objects + 1);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(num_classes - i)]);
    std::vector<std::size_t> picked(order.begin(), order.begin() + static_cast<long>(n));
    std::sort(picked.begin(), picked.end());

    std::vector<std::string> nouns;
    for (std::size_t c : picked) {
      nouns.push_back(config.classes[c]);
      scene.objects.push_back({config.classes[c], as_f32(rng.uniform(config.area_min, config.area_max))});
      for (std::size_t k = 0; k < f; ++k) {
        scene.regions.push_back(as_f32(prototypes[c][k] + config.feature_noise * rng.normal()));
      }
    }
    for (std::size_t t = 0; t < config.captions_per_scene; ++t) {
      scene.captions.push_back(make_caption(nouns, t));
    }
    out.scenes.push_back(std::move(scene));
  }

  std::vector<std::string> all_captions;
  for (const auto& sc : out.scenes)
    all_captions.insert(all_captions.end(), sc.captions.begin(), sc.captions.end());
  out.vocab = Vocabulary::build(all_captions);
  return out;
}

// ------------------------------------------------------------------- files

void save_features(const std::filesystem::path& path, std::span<const Scene> scenes) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  for (const auto& s : scenes) {
    nlohmann::ordered_json line;
    line["id"] = s.id;
    auto regions = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < s.num_regions(); ++r) {
      auto row = nlohmann::ordered_json::array();
      for (std::size_t k = 0; k < s.feature_dim; ++k) {
        row.push_back(static_cast<float>(s.regions[r * s.feature_dim + k]));
      }
      regions.push_back(std::move(row));
    }
    line["regions"] = std::move(regions);
    auto objects = nlohmann::ordered_json::array();
    for (const auto& o : s.objects) {
      nlohmann::ordered_json obj;
      obj["class"] = o.cls;
      obj["area_frac"] = static_cast<float>(o.area_frac);
      objects.push_back(std::move(obj));
    }
    line["objects"] = std::move(objects);
    line["captions"] = s.captions;
    os << line.dump() << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<Scene> load_features(const std::filesystem::path& path, std::size_t expected_dim) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open feature file: " + path.string());
  std::vector<Scene> scenes;
  std::string text;
  std::size_t lineno = 0;
  while (std::getline(is, text)) {
    ++lineno;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    Json j;
    try {
      j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(where + "malformed JSON (" + e.what() + ")");
    }
    try {
      Scene s;
      s.id = j.at("id").get<std::string>();
      const auto& regions = j.at("regions");
      if (!regions.is_array() || regions.empty()) throw InputError(where + "regions must be a non-empty array");
      for (const auto& row : regions) {
        const auto values = row.get<std::vector<double>>();
        if (s.feature_dim == 0) s.feature_dim = values.size();
        const std::size_t want = expected_dim ? expected_dim : s.feature_dim;
        if (values.size() != want || values.empty()) {
          throw InputError(where + "region dim mismatch: expected " + std::to_string(want) +
                           ", got " + std::to_string(values.size()));
        }
        s.regions.insert(s.regions.end(), values.begin(), values.end());
      }
      if (j.contains("objects")) {
        for (const auto& o : j.at("objects")) {
          ObjectAnnotation a{o.at("class").get<std::string>(), o.at("area_frac").get<double>()};
          if (!(a.area_frac >= 0.0 && a.area_frac <= 1.0)) {
            throw InputError(where + "area_frac outside [0, 1] for class '" + a.cls + "'");
          }
          s.objects.push_back(std::move(a));
        }
      }
      if (j.contains("captions")) s.captions = j.at("captions").get<std::vector<std::string>>();
      scenes.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where + "schema violation (" + e.what() + ")");
    }
  }
  if (!scenes.empty() && expected_dim == 0) {
    for (const auto& s : scenes) {
      if (s.feature_dim != scenes.front().feature_dim) {
        throw InputError(path.string() + ": scene '" + s.id + "' has region dim " +
                         std::to_string(s.feature_dim) + ", expected " +
                         std::to_string(scenes.front().feature_dim));
      }
    }
  }
  return scenes;
}

std::vector<std::string> load_lexicon(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open lexicon: " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(is, line)) {
    for (auto& w : tokenize(line)) words.push_back(std::move(w));
  }
  return words;
}

void save_lexicon(const std::filesystem::path& path, std::span<const std::string> lexicon) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  for (const auto& w : lexicon) os << w << '\n';
}

void write_dataset(const SyntheticDataset& data, const DatasetConfig& config,
                   const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  save_features(dir / dataset_files::kFeatures, data.scenes);
  data.vocab.save(dir / dataset_files::kVocab);
  data.word_vectors.save(dir / dataset_files::kWordVectors);
  save_lexicon(dir / dataset_files::kLexicon, data.lexicon);
  write_json_file(dir / dataset_files::kConfig, to_json(config));
}

bool is_validation_scene(std::string_view id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : id) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h % 10 == 0;
}

// ----------------------------------------------------------------- batching

Batch batchify(std::span<const Scene> scenes, std::span<const Example> examples,
               const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 1) throw UsageError("batchify: max_len must be positive");
  Batch b;
  b.size = examples.size();
  std::vector<std::vector<int>> words;
  for (const auto& ex : examples) {
    if (ex.scene >= scenes.size()) throw InputError("batchify: scene index out of range");
    const Scene& s = scenes[ex.scene];
    if (ex.caption >= s.captions.size()) {
      throw InputError("batchify: scene '" + s.id + "' has no caption " + std::to_string(ex.caption));
    }
    if (b.feature_dim == 0) b.feature_dim = s.feature_dim;
    if (s.feature_dim != b.feature_dim) throw ShapeError("batchify: mixed region dims");
    auto ids = vocab.encode(s.captions[ex.caption]);
    if (ids.size() + 1 > max_len) {
      b.warnings.push_back("scene '" + s.id + "' caption " + std::to_string(ex.caption) +
                           " truncated from " + std::to_string(ids.size()) + " to " +
                           std::to_string(max_len - 1) + " words");
      ids.resize(max_len - 1);
    }
    b.seq_len = std::max(b.seq_len, ids.size() + 1);
    b.max_regions = std::max(b.max_regions, s.num_regions());
    b.scene_index.push_back(ex.scene);
    words.push_back(std::move(ids));
  }
  b.regions.assign(b.size * b.max_regions * b.feature_dim, 0.0);
  b.region_valid.assign(b.size * b.max_regions, 0);
  b.inputs.assign(b.size * b.seq_len, tokens::kPad);
  b.targets.assign(b.size * b.seq_len, tokens::kPad);
  b.token_valid.assign(b.size * b.seq_len, 0);
  for (std::size_t i = 0; i < b.size; ++i) {
    const Scene& s = scenes[b.scene_index[i]];
    std::copy(s.regions.begin(), s.regions.end(),
              b.regions.begin() + static_cast<long>(i * b.max_regions * b.feature_dim));
    std::fill_n(b.region_valid.begin() + static_cast<long>(i * b.max_regions), s.num_regions(), 1);
    const auto& w = words[i];
    int* in = b.inputs.data() + i * b.seq_len;
    int* tg = b.targets.data() + i * b.seq_len;
    in[0] = tokens::kBos;
    for (std::size_t t = 0; t < w.size(); ++t) {
      in[t + 1] = w[t];
      tg[t] = w[t];
    }
    tg[w.size()] = tokens::kEos;
    std::fill_n(b.token_valid.begin() + static_cast<long>(i * b.seq_len), w.size() + 1, 1);
  }
  return b;
}

Tensor Batch::item_regions(std::size_t i) const {
  const auto begin = regions.begin() + static_cast<long>(i * max_regions * feature_dim);
  return Tensor({max_regions, feature_dim},
                std::vector<double>(begin, begin + static_cast<long>(max_regions * feature_dim)));
}

std::span<const std::uint8_t> Batch::item_region_valid(std::size_t i) const {
  return std::span(region_valid).subspan(i * max_regions, max_regions);
}

std::span<const int> Batch::item_inputs(std::size_t i) const {
  return std::span(inputs).subspan(i * seq_len, seq_len);
}

std::span<const int> Batch::item_targets(std::size_t i) const {
  return std::span(targets).subspan(i * seq_len, seq_len);
}

}  // namespace smart
