#include "smart/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "smart/decoding.hpp"
#include "smart/errors.hpp"
#include "smart/random.hpp"

namespace smart {

namespace {

std::vector<int> pad_to_skip(std::span<const int> targets) {
  std::vector<int> cols(targets.begin(), targets.end());
  for (int& c : cols)
    if (c == tokens::kPad) c = -1;
  return cols;
}

std::size_t count_targets(std::span<const int> targets) {
  return static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](int t) { return t != tokens::kPad; }));
}

Tensor accumulate(const Tensor& total, const Tensor& term) {
  return total.defined() ? add(total, term) : term;
}

}  // namespace

Tensor nll_sum(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.rows() != targets.size()) {
    throw ShapeError("cross-entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const auto cols = pad_to_skip(targets);
  return scale(sum(pick(log_softmax(logits), cols)), -1.0);
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> targets) {
  const std::size_t n = count_targets(targets);
  Tensor total = nll_sum(logits, targets);
  if (n == 0) throw InputError("cross-entropy: every target is PAD");
  return scale(total, 1.0 / static_cast<double>(n));
}

double noam_lr(std::uint64_t s, std::size_t d, std::size_t w, bool printed_exponent) {
  if (s == 0) throw UsageError("noam_lr: step must be >= 1");
  if (d == 0 || w == 0) throw UsageError("noam_lr: d and warmup must be positive");
  const double sd = static_cast<double>(s);
  const double wd = static_cast<double>(w);
  const double warm = sd * std::pow(wd, printed_exponent ? -0.5 : -1.5);
  return std::pow(static_cast<double>(d), -0.5) * std::min(std::pow(sd, -0.5), warm);
}

void ScheduleConfig::validate() const {
  if (warmup < 1) throw ConfigError("schedule.warmup: must be >= 1");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("schedule.scale: must be positive");
}

void AdamConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam.beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam.beta2: must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam.eps: must be positive");
}

Adam::Adam(ParameterSet& params, AdamConfig config) : params_(params), config_(config) {
  config_.validate();
  for (const auto& p : params_.all()) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  auto all = params_.all();
  for (std::size_t i = 0; i < all.size(); ++i) {
    Tensor& value = all[i].value;
    const auto g = value.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    auto x = value.mutable_data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
    }
    apply_precision(m);
    apply_precision(v);
    for (std::size_t j = 0; j < x.size(); ++j) {
      x[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
    apply_precision(x);
  }
}

std::vector<CheckpointEntry> Adam::state() const {
  std::vector<CheckpointEntry> out;
  out.push_back({"step", {1}, {static_cast<float>(step_)}});
  const auto all = params_.all();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Shape& shape = all[i].value.shape();
    out.push_back({"m/" + all[i].name, shape, std::vector<float>(m_[i].begin(), m_[i].end())});
    out.push_back({"v/" + all[i].name, shape, std::vector<float>(v_[i].begin(), v_[i].end())});
  }
  return out;
}

void Adam::load_state(std::span<const CheckpointEntry> entries) {
  const auto all = params_.all();
  if (entries.size() != 1 + 2 * all.size() || entries[0].name != "step" ||
      entries[0].data.size() != 1) {
    throw InputError("optimizer state does not match the model's parameters");
  }
  step_ = static_cast<std::uint64_t>(entries[0].data[0]);
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      const auto& e = entries[1 + 2 * i + static_cast<std::size_t>(which)];
      const std::string expected = (which == 0 ? "m/" : "v/") + all[i].name;
      if (e.name != expected || e.shape != all[i].value.shape()) {
        throw ShapeError("optimizer entry " + e.name + " " + shape_to_string(e.shape) +
                         " does not match " + expected + " " +
                         shape_to_string(all[i].value.shape()));
      }
      auto& dst = which == 0 ? m_[i] : v_[i];
      dst.assign(e.data.begin(), e.data.end());
    }
  }
}

void Adam::save(const std::filesystem::path& path) const { write_checkpoint(path, state()); }

void Adam::load(const std::filesystem::path& path) { load_state(read_checkpoint(path)); }

void ScstConfig::validate() const {
  if (beam_size < 2) {
    throw ConfigError("scst.beam_size: must be >= 2 for the mean baseline, got " +
                      std::to_string(beam_size));
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("scst.lr: must be positive");
  if (reward != "cider_d") throw ConfigError("scst.reward: unsupported reward '" + reward + "'");
  if (batch_size < 1) throw ConfigError("scst.batch_size: must be >= 1");
}

ScstSurrogate scst_surrogate(std::span<const Tensor> logprobs, std::span<const double> rewards) {
  if (logprobs.size() != rewards.size()) {
    throw ShapeError("scst: " + std::to_string(logprobs.size()) + " log-probabilities vs " +
                     std::to_string(rewards.size()) + " rewards");
  }
  const std::size_t k = rewards.size();
  if (k < 2) throw ConfigError("scst.beam_size: the mean baseline needs at least 2 samples");
  // r0 + mean(r - r0) is exact when all rewards coincide.
  double shift = 0.0;
  for (double r : rewards) shift += r - rewards[0];
  ScstSurrogate out;
  out.baseline = rewards[0] + shift / static_cast<double>(k);
  Tensor total;
  for (std::size_t i = 0; i < k; ++i) {
    const double a = rewards[i] - out.baseline;
    out.advantages.push_back(a);
    total = accumulate(total, scale(logprobs[i], a));
  }
  out.loss = scale(total, -1.0 / static_cast<double>(k));
  return out;
}

void TrainOptions::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (max_len < 2) throw ConfigError("train.max_len: must be >= 2");
  if (split != "train" && split != "all") {
    throw ConfigError("train.split: expected \"train\" or \"all\", got \"" + split + "\"");
  }
  if (precision != "f32" && precision != "f64") {
    throw ConfigError("train.precision: expected \"f32\" or \"f64\", got \"" + precision + "\"");
  }
}

TrainingData prepare_training_data(std::vector<Scene> scenes, Vocabulary vocab,
                                   const TrainOptions& options) {
  options.validate();
  TrainingData data;
  data.scenes = std::move(scenes);
  data.vocab = std::move(vocab);
  std::vector<std::size_t> held_out;
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    const bool val = options.split == "train" && is_validation_scene(data.scenes[s].id);
    if (val) {
      held_out.push_back(s);
      continue;
    }
    for (std::size_t c = 0; c < data.scenes[s].captions.size(); ++c) {
      if (options.max_examples != 0 && data.train.size() >= options.max_examples) break;
      data.train.push_back({s, c});
    }
  }
  if (data.train.empty()) throw InputError("training data: no scene-caption pairs");
  for (const auto& e : data.train) {
    if (data.train_scenes.empty() || data.train_scenes.back() != e.scene) {
      data.train_scenes.push_back(e.scene);
    }
  }
  data.eval_scenes = held_out.empty() ? data.train_scenes : held_out;
  if (options.max_eval_scenes != 0 && data.eval_scenes.size() > options.max_eval_scenes) {
    data.eval_scenes.resize(options.max_eval_scenes);
  }
  return data;
}

double dataset_cross_entropy(const Model& model, const TrainingData& data,
                             std::span<const Example> examples, std::size_t max_len) {
  Tape::Paused paused;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& e : examples) {
    const Example one[] = {e};
    const Batch b = batchify(data.scenes, one, data.vocab, max_len);
    ForwardContext ctx;
    const Tensor memory = model.encode(b.item_regions(0), b.item_region_valid(0), ctx);
    const Tensor logits = model.decode(b.item_inputs(0), memory, b.item_region_valid(0), ctx);
    total += nll_sum(logits, b.item_targets(0)).item();
    n += count_targets(b.item_targets(0));
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

CaptionScores score_captions(const Model& model, const TrainingData& data,
                             std::span<const std::size_t> scenes, std::size_t beam_size,
                             std::size_t max_len) {
  CaptionScores out;
  if (scenes.empty()) return out;
  std::vector<Words> candidates;
  std::vector<std::vector<Words>> references;
  for (std::size_t s : scenes) {
    const Scene& scene = data.scenes[s];
    ForwardContext ctx;
    Tensor memory;
    {
      Tape::Paused paused;
      memory = model.encode(scene.region_tensor(), ctx);
    }
    const auto best = beam_size <= 1 ? greedy_decode(model, memory, max_len)
                                     : beam_search(model, memory, beam_size, max_len).front();
    candidates.push_back(data.vocab.words(best.tokens));
    std::vector<Words> refs;
    for (const auto& c : scene.captions) refs.push_back(tokenize(c));
    references.push_back(std::move(refs));
  }
  const auto df = DocumentFrequencies::build(references);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.cider_d += cider_d(candidates[i], references[i], df);
    out.rouge_l += rouge_l(candidates[i], references[i]);
  }
  const double n = static_cast<double>(candidates.size());
  out.cider_d /= n;
  out.rouge_l /= n;
  out.bleu1 = corpus_bleu(candidates, references, 1);
  out.bleu4 = corpus_bleu(candidates, references, 4);
  return out;
}

std::size_t EpochSampler::at(std::uint64_t k) {
  if (n_ == 0) throw UsageError("EpochSampler: empty population");
  const std::uint64_t epoch = k / n_;
  if (epoch != epoch_) {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    Rng rng(mix64(seed_ ^ mix64(epoch + 0x5eedULL)));
    for (std::size_t i = n_; i > 1; --i) {
      std::swap(perm_[i - 1], perm_[rng.below(i)]);
    }
    epoch_ = epoch;
  }
  return perm_[k % n_];
}

namespace {

void check_vocab(const Model& model, const TrainingData& data) {
  if (data.vocab.size() > model.config().vocab_size) {
    throw ConfigError("model.vocab_size: " + std::to_string(model.config().vocab_size) +
                      " is smaller than the dataset vocabulary (" +
                      std::to_string(data.vocab.size()) + ")");
  }
}

}  // namespace

CrossEntropyTrainer::CrossEntropyTrainer(Model& model, const TrainingData& data,
                                         TrainOptions options, ScheduleConfig schedule,
                                         AdamConfig adam, std::uint64_t seed)
    : model_(model),
      data_(data),
      options_(std::move(options)),
      schedule_(schedule),
      adam_(model.params(), adam),
      seed_(seed),
      sampler_(data.train.size(), mix64(seed ^ 0xba7c4ULL)) {
  options_.validate();
  schedule_.validate();
  check_vocab(model, data);
}

double CrossEntropyTrainer::lr_for_next_step() const {
  return schedule_.lr(adam_.steps() + 1, model_.config().d);
}

double CrossEntropyTrainer::step() {
  const std::uint64_t s = adam_.steps() + 1;
  const double lr = lr_for_next_step();
  std::vector<Example> picked;
  for (std::size_t i = 0; i < options_.batch_size; ++i) {
    picked.push_back(data_.train[sampler_.at((s - 1) * options_.batch_size + i)]);
  }
  const Batch batch = batchify(data_.scenes, picked, data_.vocab, options_.max_len);

  model_.params().zero_grad();
  Tape tape;
  Tape::Recording recording(tape);
  ForwardContext ctx{Mode::kTrain, seed_, s, 0};
  Tensor total;
  std::size_t tokens_seen = 0;
  for (std::size_t b = 0; b < batch.size; ++b) {
    const auto targets = batch.item_targets(b);
    const std::size_t len = count_targets(targets);
    const auto valid = batch.item_region_valid(b);
    const Tensor memory = model_.encode(batch.item_regions(b), valid, ctx);
    const Tensor logits = model_.decode(batch.item_inputs(b).first(len), memory, valid, ctx);
    total = accumulate(total, nll_sum(logits, targets.first(len)));
    tokens_seen += len;
  }
  const Tensor loss = scale(total, 1.0 / static_cast<double>(tokens_seen));
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw NumericError("non-finite cross-entropy loss at step " + std::to_string(s));
  }
  backward(tape, loss);
  adam_.step(lr);
  return value;
}

EvalRecord CrossEntropyTrainer::evaluate() const {
  EvalRecord r;
  r.step = adam_.steps();
  r.lr = schedule_.lr(std::max<std::uint64_t>(r.step, 1), model_.config().d);
  std::vector<Example> examples;
  for (std::size_t s : data_.eval_scenes)
    for (std::size_t c = 0; c < data_.scenes[s].captions.size(); ++c) examples.push_back({s, c});
  r.ce_loss = dataset_cross_entropy(model_, data_, examples, options_.max_len);
  r.scores = score_captions(model_, data_, data_.eval_scenes, 1, options_.max_len);
  return r;
}

ScstTrainer::ScstTrainer(Model& model, const TrainingData& data, ScstConfig config,
                         AdamConfig adam, std::size_t max_len, std::uint64_t seed)
    : model_(model),
      data_(data),
      config_(std::move(config)),
      max_len_(max_len),
      adam_(model.params(), adam),
      seed_(seed),
      sampler_(data.train_scenes.size(), mix64(seed ^ 0x5c57ULL)) {
  config_.validate();
  check_vocab(model, data);
  references_.resize(data.scenes.size());
  std::vector<std::vector<Words>> corpus;
  for (std::size_t s : data.train_scenes) {
    for (const auto& c : data.scenes[s].captions) references_[s].push_back(tokenize(c));
    corpus.push_back(references_[s]);
  }
  df_ = DocumentFrequencies::build(corpus);
}

ScstStepStats ScstTrainer::step() {
  const std::uint64_t s = adam_.steps() + 1;
  model_.params().zero_grad();
  Tape tape;
  Tape::Recording recording(tape);
  ForwardContext ctx{Mode::kTrain, seed_, s, 0};
  Tensor total;
  double reward_sum = 0.0;
  std::size_t samples_seen = 0;
  std::size_t images = 0;
  for (std::size_t i = 0; i < config_.batch_size; ++i) {
    const std::size_t scene = data_.train_scenes[sampler_.at((s - 1) * config_.batch_size + i)];
    auto samples = sample_for_scst(model_, data_.scenes[scene].region_tensor(), {},
                                   config_.beam_size, max_len_, ctx);
    std::vector<Tensor> logprobs;
    std::vector<double> rewards;
    for (const auto& sample : samples) {
      logprobs.push_back(sample.logprob);
      rewards.push_back(
          cider_d(data_.vocab.words(sample.hypothesis.tokens), references_[scene], df_));
      reward_sum += rewards.back();
      ++samples_seen;
    }
    if (samples.size() < 2) continue;
    total = accumulate(total, scst_surrogate(logprobs, rewards).loss);
    ++images;
  }
  ScstStepStats stats;
  stats.mean_reward = samples_seen ? reward_sum / static_cast<double>(samples_seen) : 0.0;
  if (images > 0) {
    const Tensor loss = scale(total, 1.0 / static_cast<double>(images));
    stats.loss = loss.item();
    if (!std::isfinite(stats.loss)) {
      throw NumericError("non-finite SCST loss at step " + std::to_string(s));
    }
    backward(tape, loss);
  }
  adam_.step(config_.lr);
  return stats;
}

}  // namespace smart
