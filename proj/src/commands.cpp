#include "smart/commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

#include "smart/checkpoint.hpp"
#include "smart/coverage.hpp"
#include "smart/decoding.hpp"
#include "smart/grad_check.hpp"
#include "smart/metrics.hpp"

namespace fs = std::filesystem;

namespace smart::commands {

namespace {

Precision precision_of(const TrainOptions& t) {
  return t.precision == "f64" ? Precision::kFloat64 : Precision::kFloat32;
}

fs::path require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ConfigError(what + ": file not found: " + p.string());
  return p;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::trunc) {
  if (p.has_parent_path()) ensure_dir(p.parent_path());
  std::ofstream os(p, std::ios::out | mode);
  if (!os) throw IoError("cannot open for writing: " + p.string());
  return os;
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<Json> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw InputError(path.string() + ":" + std::to_string(n) + ": malformed JSON line");
    }
    rows.push_back(std::move(j));
  }
  return rows;
}

std::string require_string(const Json& row, const char* key, const fs::path& path) {
  auto it = row.find(key);
  if (it == row.end() || !it->is_string()) {
    throw InputError(path.string() + ": record without a string \"" + key + "\"");
  }
  return it->get<std::string>();
}

struct DatasetFiles {
  std::vector<Scene> scenes;
  Vocabulary vocab;
};

DatasetFiles load_dataset_dir(const RunConfig& config) {
  const fs::path dir = config.paths.dataset;
  if (!fs::is_directory(dir)) {
    throw ConfigError("paths.dataset: dataset directory not found: " + dir.string());
  }
  const fs::path features = require_file(dir / dataset_files::kFeatures, "paths.dataset");
  DatasetFiles out;
  out.scenes = load_features(features, config.model.region_feature_dim);
  const fs::path vocab = dir / dataset_files::kVocab;
  if (fs::exists(vocab)) {
    out.vocab = Vocabulary::load(vocab);
  } else {
    std::vector<std::string> captions;
    for (const auto& s : out.scenes) captions.insert(captions.end(), s.captions.begin(), s.captions.end());
    out.vocab = Vocabulary::build(captions);
  }
  return out;
}

Json record_json(const EvalRecord& r) {
  return Json{{"step", r.step},
              {"lr", r.lr},
              {"ce_loss", r.ce_loss},
              {"cider_d", r.scores.cider_d},
              {"bleu1", r.scores.bleu1},
              {"bleu4", r.scores.bleu4},
              {"rouge_l", r.scores.rouge_l}};
}

Json scores_json(const CaptionScores& s) {
  return Json{{"cider_d", s.cider_d}, {"bleu1", s.bleu1}, {"bleu4", s.bleu4}, {"rouge_l", s.rouge_l}};
}

void save_run_checkpoint(const fs::path& run_dir, const Model& model, const Adam& adam,
                         const char* stem) {
  save_model(run_dir / (std::string(stem) + ".ckpt"), model);
  adam.save(run_dir / (std::string(stem) == "model" ? "optimizer.ckpt"
                                                   : std::string(stem) + ".optimizer.ckpt"));
}

std::unordered_set<std::string> lexicon_set(const fs::path& p) {
  const auto words = load_lexicon(p);
  return {words.begin(), words.end()};
}

fs::path sibling_or(const Json& options, const char* key, const fs::path& anchor,
                    const char* file_name) {
  if (auto it = options.find(key); it != options.end() && it->is_string()) return it->get<std::string>();
  return anchor.parent_path() / file_name;
}

std::string percent_label(double t) {
  const double pct = t * 100.0;
  char buf[32];
  if (std::abs(pct - std::round(pct)) < 1e-9) {
    std::snprintf(buf, sizeof buf, "%.0f%%", pct);
  } else {
    std::snprintf(buf, sizeof buf, "%g%%", pct);
  }
  return buf;
}

}  // namespace

Json generate_data(const RunConfig& config) {
  const auto data = generate_synthetic(config.dataset);
  write_dataset(data, config.dataset, config.paths.dataset);
  return Json{{"dataset", config.paths.dataset},
              {"scenes", data.scenes.size()},
              {"vocab_size", data.vocab.size()},
              {"lexicon_size", data.lexicon.size()}};
}

Json train(const RunConfig& config, bool resume) {
  config.validate();
  auto files = load_dataset_dir(config);
  const TrainingData data =
      prepare_training_data(std::move(files.scenes), std::move(files.vocab), config.train);
  const fs::path run_dir = config.paths.run_dir;
  ensure_dir(run_dir);
  write_json_file(run_dir / "config.json", to_json(config));
  data.vocab.save(run_dir / dataset_files::kVocab);

  PrecisionScope precision(precision_of(config.train));
  Model model(config.model, config.seed);
  CrossEntropyTrainer trainer(model, data, config.train, config.schedule, config.adam, config.seed);
  const fs::path ckpt = run_dir / "model.ckpt";
  bool resumed = false;
  if (resume && fs::exists(ckpt)) {
    const Model saved = load_model(ckpt);
    if (!(saved.config() == config.model)) {
      throw ConfigError("model: " + ckpt.string() + " was trained with a different model config");
    }
    model.params().copy_values_from(saved.params());
    trainer.optimizer().load(run_dir / "optimizer.ckpt");
    resumed = true;
  }
  auto log = open_out(run_dir / "metrics.jsonl", resumed ? std::ios::app : std::ios::trunc);

  const std::size_t total = config.train.steps;
  double last_loss = std::nan("");
  Json last_record;
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.steps_done() < total) {
    last_loss = trainer.step();
    const std::uint64_t s = trainer.steps_done();
    const bool eval_now = (config.train.eval_interval && s % config.train.eval_interval == 0) ||
                          s == total;
    if (eval_now) {
      last_record = record_json(trainer.evaluate());
      log << last_record.dump() << '\n' << std::flush;
    }
    if ((config.train.checkpoint_interval && s % config.train.checkpoint_interval == 0) ||
        s == total) {
      save_run_checkpoint(run_dir, model, trainer.optimizer(), "model");
    }
  }
  if (!fs::exists(ckpt)) save_run_checkpoint(run_dir, model, trainer.optimizer(), "model");
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return Json{{"run_dir", run_dir.string()},
              {"steps", trainer.steps_done()},
              {"resumed", resumed},
              {"train_examples", data.train.size()},
              {"final_batch_loss", last_loss},
              {"last_eval", last_record},
              {"checkpoint", ckpt.string()},
              {"seconds", seconds}};
}

Json finetune_scst(const RunConfig& config) {
  config.validate();
  const fs::path run_dir = config.paths.run_dir;
  const fs::path init = config.paths.init_checkpoint.empty() ? run_dir / "model.ckpt"
                                                             : fs::path(config.paths.init_checkpoint);
  require_file(init, "paths.init_checkpoint");
  Model model = load_model(init);
  RunConfig effective = config;
  effective.model = model.config();
  auto files = load_dataset_dir(effective);
  if (fs::exists(run_dir / dataset_files::kVocab)) {
    files.vocab = Vocabulary::load(run_dir / dataset_files::kVocab);
  }
  const TrainingData data =
      prepare_training_data(std::move(files.scenes), std::move(files.vocab), config.train);
  ensure_dir(run_dir);
  write_json_file(run_dir / "scst_config.json", to_json(effective));

  PrecisionScope precision(precision_of(config.train));
  std::vector<std::size_t> probe = data.train_scenes;
  if (config.train.max_eval_scenes && probe.size() > config.train.max_eval_scenes) {
    probe.resize(config.train.max_eval_scenes);
  }
  const std::size_t max_len = std::min(config.train.max_len, model.config().max_seq_len);
  const CaptionScores before = score_captions(model, data, probe, 1, max_len);
  ScstTrainer trainer(model, data, config.scst, config.adam, max_len, config.seed);
  auto log = open_out(run_dir / "scst_metrics.jsonl");
  CaptionScores after = before;
  for (std::size_t i = 0; i < config.scst.steps; ++i) {
    const auto stats = trainer.step();
    const std::uint64_t s = trainer.steps_done();
    if ((config.train.eval_interval && s % config.train.eval_interval == 0) ||
        s == config.scst.steps) {
      after = score_captions(model, data, probe, 1, max_len);
      Json row = scores_json(after);
      row["step"] = s;
      row["lr"] = config.scst.lr;
      row["surrogate_loss"] = stats.loss;
      row["mean_reward"] = stats.mean_reward;
      log << row.dump() << '\n' << std::flush;
    }
  }
  save_run_checkpoint(run_dir, model, trainer.optimizer(), "scst");
  return Json{{"run_dir", run_dir.string()},
              {"init_checkpoint", init.string()},
              {"steps", trainer.steps_done()},
              {"train_scenes_scored", probe.size()},
              {"before", scores_json(before)},
              {"after", scores_json(after)},
              {"checkpoint", (run_dir / "scst.ckpt").string()}};
}

Json generate(const Json& options) {
  std::string checkpoint, features, out, vocab_path;
  std::size_t beam_size = 1, max_len = 20;
  FieldReader r(options, "generate");
  r.read("checkpoint", checkpoint);
  r.read("features", features);
  r.read("out", out);
  r.read("beam_size", beam_size);
  r.read("max_len", max_len);
  r.read("vocab", vocab_path);
  r.finish();
  if (checkpoint.empty()) throw UsageError("generate: --checkpoint is required");
  if (features.empty()) throw UsageError("generate: --features is required");
  require_file(checkpoint, "generate.checkpoint");
  require_file(features, "generate.features");
  if (vocab_path.empty()) {
    const fs::path beside_ckpt = fs::path(checkpoint).parent_path() / dataset_files::kVocab;
    vocab_path = fs::exists(beside_ckpt)
                     ? beside_ckpt.string()
                     : (fs::path(features).parent_path() / dataset_files::kVocab).string();
  }
  const Model model = load_model(checkpoint);
  const Vocabulary vocab = Vocabulary::load(require_file(vocab_path, "generate.vocab"));
  if (vocab.size() > model.config().vocab_size) {
    throw ShapeError("vocabulary has " + std::to_string(vocab.size()) +
                     " tokens but the checkpoint's vocab_size is " +
                     std::to_string(model.config().vocab_size));
  }
  std::vector<Scene> scenes;
  try {
    scenes = load_features(features, model.config().region_feature_dim);
  } catch (const InputError& e) {
    throw ShapeError(std::string(e.what()) + " (checkpoint region_feature_dim=" +
                     std::to_string(model.config().region_feature_dim) + ")");
  }
  PrecisionScope precision(Precision::kFloat32);
  std::ofstream os;
  if (!out.empty()) os = open_out(out);
  std::size_t written = 0;
  for (const auto& scene : scenes) {
    ForwardContext ctx;
    Tensor memory;
    {
      Tape::Paused paused;
      memory = model.encode(scene.region_tensor(), ctx);
    }
    std::vector<BeamHypothesis> beams;
    if (beam_size <= 1) {
      beams.push_back(greedy_decode(model, memory, max_len));
    } else {
      beams = beam_search(model, memory, beam_size, max_len);
    }
    Json beam_rows = Json::array();
    for (const auto& h : beams) {
      beam_rows.push_back({{"caption", vocab.decode(h.tokens)}, {"logprob", h.logprob_sum}});
    }
    const Json row{{"id", scene.id},
                   {"caption", vocab.decode(beams.front().tokens)},
                   {"logprob", beams.front().logprob_sum},
                   {"beams", beam_rows}};
    if (os.is_open()) os << row.dump() << '\n';
    ++written;
  }
  return Json{{"predictions", written}, {"out", out}, {"beam_size", beam_size}};
}

namespace {

struct Prediction {
  std::string id;
  std::string caption;
};

std::vector<Prediction> load_predictions(const fs::path& path) {
  std::vector<Prediction> out;
  for (const auto& row : read_jsonl(path)) {
    out.push_back({require_string(row, "id", path), require_string(row, "caption", path)});
  }
  if (out.empty()) throw InputError(path.string() + ": no predictions");
  return out;
}

// Predictions paired with scenes; ids without a scene are returned separately.
struct Aligned {
  std::vector<std::pair<const Prediction*, const Scene*>> pairs;
  std::vector<std::string> missing;
};

Aligned align(const std::vector<Prediction>& predictions, const std::vector<Scene>& scenes) {
  std::map<std::string, const Scene*, std::less<>> by_id;
  for (const auto& s : scenes) by_id[s.id] = &s;
  Aligned a;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) {
      a.missing.push_back(p.id);
    } else {
      a.pairs.emplace_back(&p, it->second);
    }
  }
  return a;
}

const std::vector<double> kDefaultThresholds = {0.01, 0.03, 0.05, 0.10};

Json coverage_block(const Aligned& aligned, const std::vector<double>& thresholds,
                    const WordVectorTable& vectors, const std::unordered_set<std::string>& lexicon,
                    Json* per_image) {
  Json means = Json::object();
  Json vacuous = Json::object();
  for (double t : thresholds) {
    double sum = 0.0;
    std::size_t n = 0, skipped = 0;
    for (std::size_t i = 0; i < aligned.pairs.size(); ++i) {
      const auto& [pred, scene] = aligned.pairs[i];
      const auto c = smart::coverage(pred->caption, scene->objects, vectors, lexicon, t);
      if (per_image) (*per_image)[i]["coverage"][percent_label(t)] = c.vacuous ? Json() : Json(c.value);
      if (c.vacuous) {
        ++skipped;
        continue;
      }
      sum += c.value;
      ++n;
    }
    means[percent_label(t)] = n ? Json(sum / static_cast<double>(n)) : Json();
    vacuous[percent_label(t)] = skipped;
  }
  return Json{{"mean", means}, {"vacuous", vacuous}};
}

}  // namespace

Json evaluate(const Json& options) {
  std::string predictions, references, out, vectors_path, lexicon_path;
  FieldReader r(options, "evaluate");
  r.read("predictions", predictions);
  r.read("references", references);
  r.read("out", out);
  r.read("word_vectors", vectors_path);
  r.read("lexicon", lexicon_path);
  r.finish();
  if (predictions.empty() || references.empty()) {
    throw UsageError("evaluate: --predictions and --references are required");
  }
  const auto preds = load_predictions(require_file(predictions, "evaluate.predictions"));
  const auto scenes = load_features(require_file(references, "evaluate.references"));
  const Aligned aligned = align(preds, scenes);
  if (aligned.pairs.empty()) throw InputError("evaluate: no prediction id matches a reference");

  std::vector<Words> candidates;
  std::vector<std::vector<Words>> refs;
  for (const auto& [pred, scene] : aligned.pairs) {
    candidates.push_back(tokenize(pred->caption));
    std::vector<Words> rs;
    for (const auto& c : scene->captions) rs.push_back(tokenize(c));
    refs.push_back(std::move(rs));
  }
  const auto df = DocumentFrequencies::build(refs);
  Json per_image = Json::array();
  double cider_sum = 0.0, rouge_sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double c = cider_d(candidates[i], refs[i], df);
    const double rl = rouge_l(candidates[i], refs[i]);
    cider_sum += c;
    rouge_sum += rl;
    per_image.push_back({{"id", aligned.pairs[i].first->id},
                         {"bleu1", bleu(candidates[i], refs[i], 1)},
                         {"bleu4", bleu(candidates[i], refs[i], 4)},
                         {"rouge_l", rl},
                         {"cider_d", c}});
  }
  const double n = static_cast<double>(candidates.size());
  Json corpus{{"bleu1", corpus_bleu(candidates, refs, 1)},
              {"bleu4", corpus_bleu(candidates, refs, 4)},
              {"rouge_l", rouge_sum / n},
              {"cider_d", cider_sum / n}};

  const fs::path vp = vectors_path.empty() ? fs::path(references).parent_path() / dataset_files::kWordVectors
                                           : fs::path(vectors_path);
  const fs::path lp = lexicon_path.empty() ? fs::path(references).parent_path() / dataset_files::kLexicon
                                           : fs::path(lexicon_path);
  Json warnings = Json::array();
  for (const auto& id : aligned.missing) warnings.push_back("no reference for id " + id + "; excluded");
  const bool has_objects = std::all_of(aligned.pairs.begin(), aligned.pairs.end(),
                                       [](const auto& p) { return !p.second->objects.empty(); });
  if (fs::exists(vp) && fs::exists(lp) && has_objects) {
    const Json cov = coverage_block(aligned, kDefaultThresholds, WordVectorTable::load(vp),
                                    lexicon_set(lp), &per_image);
    for (const auto& [label, value] : cov["mean"].items()) corpus["coverage@" + label] = value;
  } else {
    warnings.push_back("coverage skipped: word vectors, lexicon or object annotations unavailable");
  }
  const Json report{{"per_image", per_image},
                    {"corpus", corpus},
                    {"missing_ids", aligned.missing},
                    {"warnings", warnings}};
  if (!out.empty()) {
    if (fs::path(out).has_parent_path()) ensure_dir(fs::path(out).parent_path());
    write_json_file(out, report);
  }
  return report;
}

Json coverage(const Json& options) {
  std::string predictions, features, out, vectors_path, lexicon_path;
  std::vector<double> thresholds = kDefaultThresholds;
  FieldReader r(options, "coverage");
  r.read("predictions", predictions);
  r.read("features", features);
  r.read("out", out);
  r.read("thresholds", thresholds);
  r.read("word_vectors", vectors_path);
  r.read("lexicon", lexicon_path);
  r.finish();
  if (predictions.empty() || features.empty()) {
    throw UsageError("coverage: --predictions and --features are required");
  }
  if (thresholds.empty()) throw UsageError("coverage: at least one threshold is required");
  for (double t : thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw UsageError("coverage: thresholds must lie in [0, 1]");
  }
  const auto preds = load_predictions(require_file(predictions, "coverage.predictions"));
  const auto scenes = load_features(require_file(features, "coverage.features"));
  const Aligned aligned = align(preds, scenes);
  if (aligned.pairs.empty()) throw InputError("coverage: no prediction id matches a scene");
  for (const auto& [pred, scene] : aligned.pairs) {
    if (scene->objects.empty()) {
      throw InputError("coverage: scene " + scene->id + " has no object annotations");
    }
  }
  const fs::path vp = sibling_or(options, "word_vectors", features, dataset_files::kWordVectors);
  const fs::path lp = sibling_or(options, "lexicon", features, dataset_files::kLexicon);
  const auto vectors = WordVectorTable::load(require_file(vp, "coverage.word_vectors"));
  const auto lexicon = lexicon_set(require_file(lp, "coverage.lexicon"));

  Json per_image = Json::array();
  for (const auto& [pred, scene] : aligned.pairs) per_image.push_back({{"id", pred->id}});
  Json block = coverage_block(aligned, thresholds, vectors, lexicon, &per_image);
  const Json report{{"thresholds", thresholds},
                    {"mean", block["mean"]},
                    {"vacuous", block["vacuous"]},
                    {"images", aligned.pairs.size()},
                    {"missing_ids", aligned.missing},
                    {"per_image", per_image}};
  if (!out.empty()) {
    if (fs::path(out).has_parent_path()) ensure_dir(fs::path(out).parent_path());
    write_json_file(out, report);
  }
  return report;
}

Json bench(const Json& options) {
  std::vector<std::size_t> layers = {2, 6};
  std::vector<std::size_t> memory = {0, 40};
  std::vector<std::size_t> batch_sizes = {1, 8, 32};
  std::size_t repeats = 10, warmup = 2, decode_len = 20, regions = 6;
  std::uint64_t seed = 1;
  std::string out_csv, out_json;
  ModelConfig base;
  FieldReader r(options, "bench");
  r.read("layers", layers);
  r.read("memory_slots", memory);
  r.read("batch_sizes", batch_sizes);
  r.read("repeats", repeats);
  r.read("warmup", warmup);
  r.read("decode_len", decode_len);
  r.read("regions", regions);
  r.read("seed", seed);
  r.read("out_csv", out_csv);
  r.read("out_json", out_json);
  r.read("d", base.d);
  r.read("heads", base.heads);
  r.read("d_ff", base.d_ff);
  r.read("vocab_size", base.vocab_size);
  r.finish();
  if (repeats < 2) throw UsageError("bench: repeats must be >= 2 to report a deviation");
  if (layers.empty() || memory.empty() || batch_sizes.empty() || decode_len == 0 || regions == 0) {
    throw UsageError("bench: empty grid");
  }
  base.max_seq_len = std::max(base.max_seq_len, decode_len);

  struct Cell {
    std::size_t layers, memory, batch;
    const Model* model;
    std::vector<double> samples_ms;
  };
  std::vector<std::unique_ptr<Model>> models;
  std::vector<Cell> cells;
  for (std::size_t l : layers) {
    for (std::size_t m : memory) {
      ModelConfig c = base;
      c.n_enc_layers = c.n_dec_layers = l;
      c.memory_slots = m;
      c.validate();
      models.push_back(std::make_unique<Model>(c, seed));
    }
  }
  // Grouped by (layers, batch) with memory innermost, so cells that differ
  // only in memory slots run back to back.
  for (std::size_t li = 0; li < layers.size(); ++li)
    for (std::size_t b : batch_sizes)
      for (std::size_t mi = 0; mi < memory.size(); ++mi)
        cells.push_back({layers[li], memory[mi], b, models[li * memory.size() + mi].get(), {}});
  // Shared inputs: one region set per batch slot.
  std::size_t max_batch = *std::max_element(batch_sizes.begin(), batch_sizes.end());
  Rng rng(seed ^ 0xbe7cULL);
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < max_batch; ++i) {
    std::vector<double> v(regions * base.region_feature_dim);
    for (double& x : v) x = rng.normal();
    inputs.emplace_back(Shape{regions, base.region_feature_dim}, std::move(v));
  }

  PrecisionScope precision(Precision::kFloat32);
  Tape::Paused paused;
  auto run_cell = [&](const Cell& cell) {
    SearchOptions so = model_search_options(*cell.model, 1, decode_len);
    so.stop_at_eos = false;
    // Untimed pass so each sample starts with this model's weights in cache.
    {
      ForwardContext ctx;
      const Tensor memory_out = cell.model->encode(inputs[0], ctx);
      greedy_decode(model_scorer(*cell.model, memory_out), cell.model->config().vocab_size, so);
    }
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t b = 0; b < cell.batch; ++b) {
      ForwardContext ctx;
      const Tensor memory_out = cell.model->encode(inputs[b], ctx);
      greedy_decode(model_scorer(*cell.model, memory_out), cell.model->config().vocab_size, so);
    }
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  // Rounds interleave all cells so drift affects them alike. Group order
  // and the order inside each group rotate from round to round.
  const std::size_t group = memory.size(), groups = cells.size() / group;
  for (std::size_t round = 0; round < warmup + repeats; ++round) {
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t j = 0; j < group; ++j) {
        Cell& cell = cells[((g + round) % groups) * group + (j + round) % group];
        const double ms = run_cell(cell);
        if (round >= warmup) cell.samples_ms.push_back(ms);
      }
    }
  }

  Json rows = Json::array();
  std::ofstream csv;
  if (!out_csv.empty()) {
    csv = open_out(out_csv);
    csv << "layers,memory_slots,batch_size,mean_ms,std_ms,repeats\n";
  }
  for (const auto& cell : cells) {
    const double n = static_cast<double>(cell.samples_ms.size());
    double mean = 0.0;
    for (double x : cell.samples_ms) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : cell.samples_ms) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / (n - 1.0));
    rows.push_back({{"layers", cell.layers},
                    {"memory_slots", cell.memory},
                    {"batch_size", cell.batch},
                    {"mean_ms", mean},
                    {"std_ms", sd},
                    {"repeats", cell.samples_ms.size()}});
    if (csv.is_open()) {
      csv << cell.layers << ',' << cell.memory << ',' << cell.batch << ',' << mean << ',' << sd
          << ',' << cell.samples_ms.size() << '\n';
    }
  }
  const Json report{{"decode_len", decode_len},
                    {"regions", regions},
                    {"warmup", warmup},
                    {"model", to_json(base)},
                    {"results", rows}};
  if (!out_json.empty()) {
    if (fs::path(out_json).has_parent_path()) ensure_dir(fs::path(out_json).parent_path());
    write_json_file(out_json, report);
  }
  return report;
}

Json gradcheck(const Json& options) {
  ModelConfig c;
  c.d = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.memory_slots = 2;
  c.vocab_size = 16;
  c.region_feature_dim = 8;
  c.max_seq_len = 8;
  c.dropout_keep = 1.0;
  std::size_t layers = 2;
  GradCheckOptions gc;
  std::string corrupt, out;
  double corrupt_factor = 1.01;
  FieldReader r(options, "gradcheck");
  r.read("d", c.d);
  r.read("heads", c.heads);
  r.read("d_ff", c.d_ff);
  r.read("memory_slots", c.memory_slots);
  r.read("vocab_size", c.vocab_size);
  r.read("layers", layers);
  r.read("eps", gc.eps);
  r.read("tol", gc.tol);
  r.read("max_coords", gc.max_coords_per_param);
  r.read("seed", gc.seed);
  r.read("corrupt", corrupt);
  r.read("corrupt_factor", corrupt_factor);
  r.read("out", out);
  r.finish();
  c.n_enc_layers = c.n_dec_layers = layers;
  c.validate();

  PrecisionScope precision(Precision::kFloat64);
  Model model(c, gc.seed);
  Rng rng(gc.seed ^ 0x6c6bULL);
  std::vector<double> regions(3 * c.region_feature_dim);
  for (double& x : regions) x = rng.normal();
  const Tensor region_tensor({3, c.region_feature_dim}, regions);
  std::vector<int> inputs{tokens::kBos}, targets;
  for (int i = 0; i < 4; ++i) {
    const int t = tokens::kNumReserved +
                  static_cast<int>(rng.below(c.vocab_size - tokens::kNumReserved));
    inputs.push_back(t);
    targets.push_back(t);
  }
  targets.push_back(tokens::kEos);
  inputs.resize(targets.size());
  auto loss_fn = [&] {
    ForwardContext ctx;
    const Tensor memory = model.encode(region_tensor, ctx);
    return cross_entropy_loss(model.decode(inputs, memory, ctx), targets);
  };

  struct FaultGuard {
    explicit FaultGuard(const std::string& op, double f) {
      if (!op.empty()) testing::inject_backward_fault(op, f);
    }
    ~FaultGuard() { testing::inject_backward_fault(""); }
  } guard(corrupt, corrupt_factor);

  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport report = grad_check(loss_fn, model.params(), gc);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Json per_param = Json::array();
  std::size_t checked = 0, skipped = 0;
  for (const auto& p : report.per_param) {
    per_param.push_back({{"name", p.name},
                         {"max_rel_error", p.max_rel_error},
                         {"worst_index", p.worst_index},
                         {"analytic", p.analytic},
                         {"numeric", p.numeric},
                         {"checked", p.checked},
                         {"skipped", p.skipped}});
    checked += p.checked;
    skipped += p.skipped;
  }
  const Json summary{{"passed", report.passed},
                     {"tol", gc.tol},
                     {"eps", gc.eps},
                     {"max_rel_error", report.max_rel_error},
                     {"worst", {{"param", report.worst_param}, {"index", report.worst_index}}},
                     {"corrupt", corrupt},
                     {"coordinates_checked", checked},
                     {"coordinates_skipped", skipped},
                     {"parameters", model.params().scalar_count()},
                     {"seconds", seconds},
                     {"model", to_json(c)},
                     {"per_param", per_param}};
  if (!out.empty()) {
    if (fs::path(out).has_parent_path()) ensure_dir(fs::path(out).parent_path());
    write_json_file(out, summary);
  }
  return summary;
}

}  // namespace smart::commands
