#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "smart/tensor.hpp"
#include "smart/text.hpp"

namespace smart {

struct ObjectAnnotation {
  std::string cls;
  double area_frac = 0.0;  // fraction of the image, in [0, 1]

  bool operator==(const ObjectAnnotation&) const = default;
};

struct Scene {
  std::string id;
  std::size_t feature_dim = 0;
  std::vector<double> regions;  // num_regions × feature_dim, row-major
  std::vector<ObjectAnnotation> objects;
  std::vector<std::string> captions;

  std::size_t num_regions() const { return feature_dim ? regions.size() / feature_dim : 0; }
  Tensor region_tensor() const;

  bool operator==(const Scene&) const = default;
};

/// Token ↔ id map. Ids 0..3 are PAD, BOS, EOS, UNK; the rest are ordered by
/// descending corpus frequency, then lexicographically.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary build(std::span<const std::string> captions);
  /// One token per line; line i holds id i + 4.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;

  /// Word ids of a caption, without BOS/EOS.
  std::vector<int> encode(std::string_view caption) const;
  /// Words up to the first EOS; PAD/BOS are dropped.
  Words words(std::span<const int> ids) const;
  std::string decode(std::span<const int> ids) const { return join_words(words(ids)); }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct DatasetConfig {
  std::uint64_t seed = 7;
  std::size_t num_scenes = 200;
  std::size_t region_feature_dim = 64;
  std::size_t min_objects = 2;
  std::size_t max_objects = 6;
  std::vector<std::string> classes = {"cup",  "table", "chair",  "book",  "bottle", "lamp",
                                      "plate", "bowl", "laptop", "phone", "clock",  "vase"};
  /// Extra lexicon nouns whose word vectors are perturbations of a class.
  std::map<std::string, std::string> synonyms = {
      {"mug", "cup"}, {"desk", "table"}, {"flask", "bottle"}, {"notebook", "laptop"}};
  double feature_noise = 0.1;
  double area_min = 0.005;
  double area_max = 0.3;
  std::size_t captions_per_scene = 3;  // 1..3 caption templates
  std::size_t word_vector_dim = 16;
  double synonym_perturbation = 0.3;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Word → unit-norm vector.
class WordVectorTable {
 public:
  WordVectorTable() = default;
  explicit WordVectorTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  /// Normalises `v` to unit length before storing.
  void set(const std::string& word, std::vector<double> v);
  const std::vector<double>* find(std::string_view word) const;
  std::size_t size() const { return vectors_.size(); }
  const std::map<std::string, std::vector<double>, std::less<>>& entries() const { return vectors_; }

  static WordVectorTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>, std::less<>> vectors_;
};

struct SyntheticDataset {
  std::vector<Scene> scenes;
  Vocabulary vocab;
  WordVectorTable word_vectors;
  std::vector<std::string> lexicon;  // sorted nouns (classes + synonyms)
};

/// Per scene: 2..6 distinct classes, one region per object (class prototype
/// plus Gaussian noise), uniform area fractions, and one caption per
/// template naming every object in class-list order. Class word vectors are
/// the normalised leading components of the class prototypes.
SyntheticDataset generate_synthetic(const DatasetConfig& config);

/// File names inside a dataset directory.
namespace dataset_files {
inline constexpr const char* kFeatures = "features.jsonl";
inline constexpr const char* kVocab = "vocab.txt";
inline constexpr const char* kWordVectors = "word_vectors.json";
inline constexpr const char* kLexicon = "lexicon.txt";
inline constexpr const char* kConfig = "dataset_config.json";
}  // namespace dataset_files

void write_dataset(const SyntheticDataset& data, const DatasetConfig& config,
                   const std::filesystem::path& dir);

void save_features(const std::filesystem::path& path, std::span<const Scene> scenes);
/// Parses the JSON-lines feature file. `expected_dim` == 0 accepts any
/// (consistent) dim. Malformed lines raise InputError with the line number.
std::vector<Scene> load_features(const std::filesystem::path& path, std::size_t expected_dim = 0);

std::vector<std::string> load_lexicon(const std::filesystem::path& path);
void save_lexicon(const std::filesystem::path& path, std::span<const std::string> lexicon);

/// Deterministic ~90/10 split by hash of the scene id.
bool is_validation_scene(std::string_view id);

struct Example {
  std::size_t scene = 0;
  std::size_t caption = 0;
};

struct Batch {
  std::size_t size = 0;
  std::size_t max_regions = 0;
  std::size_t feature_dim = 0;
  std::vector<double> regions;             // size × max_regions × feature_dim, zero padded
  std::vector<std::uint8_t> region_valid;  // size × max_regions
  std::size_t seq_len = 0;
  std::vector<int> inputs;                 // size × seq_len: BOS w1..wn PAD..
  std::vector<int> targets;                // size × seq_len: w1..wn EOS PAD..
  std::vector<std::uint8_t> token_valid;   // size × seq_len, 1 where target != PAD
  std::vector<std::size_t> scene_index;
  std::vector<std::string> warnings;       // truncation records

  Tensor item_regions(std::size_t b) const;
  std::span<const std::uint8_t> item_region_valid(std::size_t b) const;
  std::span<const int> item_inputs(std::size_t b) const;
  std::span<const int> item_targets(std::size_t b) const;
};

/// Pads token sequences to the batch maximum and region sets to the largest
/// set. Captions needing more than `max_len` positions (words + EOS) are
/// truncated and reported in Batch::warnings.
Batch batchify(std::span<const Scene> scenes, std::span<const Example> examples,
               const Vocabulary& vocab, std::size_t max_len);

}  // namespace smart
