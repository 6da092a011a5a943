#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "smart/checkpoint.hpp"
#include "smart/data.hpp"
#include "smart/metrics.hpp"
#include "smart/model.hpp"

namespace smart {

/// Mean over non-PAD positions of -log_softmax(logits)[target].
/// logits: T×V; targets: T ids (PAD positions ignored).
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> targets);
/// Sum over non-PAD positions of -log_softmax(logits)[target].
Tensor nll_sum(const Tensor& logits, std::span<const int> targets);

/// d^-0.5 · min(s^-0.5, s · w^-1.5). With `printed_exponent` the warmup
/// branch is s · w^-0.5 instead. s == 0 raises UsageError.
double noam_lr(std::uint64_t s, std::size_t d, std::size_t w, bool printed_exponent = false);

struct ScheduleConfig {
  std::size_t warmup = 400;
  bool printed_exponent = false;
  double scale = 1.0;  // multiplies the schedule
  void validate() const;
  double lr(std::uint64_t step, std::size_t d) const {
    return scale * noam_lr(step, d, warmup, printed_exponent);
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  void validate() const;
};

/// Adam with bias correction. Moments and updated values are rounded to the
/// active precision, so f32 training state round-trips through checkpoints.
class Adam {
 public:
  Adam(ParameterSet& params, AdamConfig config = {});

  void step(double lr);
  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

  /// Moments as checkpoint entries ("m/<param>", "v/<param>", "step").
  std::vector<CheckpointEntry> state() const;
  void load_state(std::span<const CheckpointEntry> entries);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  ParameterSet& params_;
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct ScstConfig {
  std::size_t beam_size = 5;
  double lr = 5e-6;
  std::string reward = "cider_d";
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  /// Throws ConfigError; beam_size must be at least 2.
  void validate() const;
};

struct ScstSurrogate {
  Tensor loss;
  double baseline = 0.0;
  std::vector<double> advantages;
};

/// Mean-baseline REINFORCE surrogate -(1/k) Σ (r_i - b) log p_i with rewards
/// treated as constants. Needs k >= 2.
ScstSurrogate scst_surrogate(std::span<const Tensor> logprobs, std::span<const double> rewards);

struct TrainOptions {
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  std::size_t eval_interval = 200;     // 0 disables periodic evaluation
  std::size_t checkpoint_interval = 0; // 0 saves only at the end
  std::size_t max_len = 20;            // caption positions (words + EOS)
  std::string split = "train";         // "train" (90/10 split) or "all"
  std::size_t max_examples = 0;        // 0 keeps every scene-caption pair
  std::size_t max_eval_scenes = 50;
  std::string precision = "f32";       // "f32" or "f64"
  void validate() const;
};

/// Scenes plus the example list and evaluation scenes derived from them.
struct TrainingData {
  std::vector<Scene> scenes;
  Vocabulary vocab;
  std::vector<Example> train;
  std::vector<std::size_t> train_scenes;  // distinct scenes used for training
  std::vector<std::size_t> eval_scenes;   // held-out scenes, or training scenes if none
};

TrainingData prepare_training_data(std::vector<Scene> scenes, Vocabulary vocab,
                                   const TrainOptions& options);

/// Eval-mode token-level mean cross-entropy over `examples`.
double dataset_cross_entropy(const Model& model, const TrainingData& data,
                             std::span<const Example> examples, std::size_t max_len);

struct CaptionScores {
  double cider_d = 0.0;  // mean over scenes
  double bleu1 = 0.0;    // corpus level
  double bleu4 = 0.0;
  double rouge_l = 0.0;  // mean over scenes
};

/// Decodes every listed scene (beam 1 = greedy) and scores it against the
/// scene's references; document frequencies come from those references.
CaptionScores score_captions(const Model& model, const TrainingData& data,
                             std::span<const std::size_t> scenes, std::size_t beam_size,
                             std::size_t max_len);

/// One metrics-log record.
struct EvalRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double ce_loss = 0.0;
  CaptionScores scores;
};

/// Deterministic epoch order: example k of the infinite stream is
/// perm_{k / n}[k % n], where each epoch permutation is drawn from the seed.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}
  std::size_t at(std::uint64_t k);

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = ~0ULL;
  std::vector<std::size_t> perm_;
};

/// Cross-entropy training with the Noam schedule. The step counter lives in
/// the optimiser, so restoring parameters and optimiser state resumes the
/// exact batch sequence, dropout masks and learning rates.
class CrossEntropyTrainer {
 public:
  CrossEntropyTrainer(Model& model, const TrainingData& data, TrainOptions options,
                      ScheduleConfig schedule, AdamConfig adam, std::uint64_t seed);

  /// Runs one optimiser step and returns the batch loss. Non-finite losses
  /// raise NumericError naming the step.
  double step();
  std::uint64_t steps_done() const { return adam_.steps(); }
  double lr_for_next_step() const;
  EvalRecord evaluate() const;
  Adam& optimizer() { return adam_; }

 private:
  Model& model_;
  const TrainingData& data_;
  TrainOptions options_;
  ScheduleConfig schedule_;
  Adam adam_;
  std::uint64_t seed_;
  EpochSampler sampler_;
};

struct ScstStepStats {
  double loss = 0.0;
  double mean_reward = 0.0;
};

/// Self-critical fine-tuning with beam samples, a mean reward baseline and a
/// fixed learning rate. Rewards use document frequencies of the training
/// references.
class ScstTrainer {
 public:
  ScstTrainer(Model& model, const TrainingData& data, ScstConfig config, AdamConfig adam,
              std::size_t max_len, std::uint64_t seed);

  ScstStepStats step();
  std::uint64_t steps_done() const { return adam_.steps(); }
  Adam& optimizer() { return adam_; }
  const DocumentFrequencies& document_frequencies() const { return df_; }

 private:
  Model& model_;
  const TrainingData& data_;
  ScstConfig config_;
  std::size_t max_len_;
  Adam adam_;
  std::uint64_t seed_;
  EpochSampler sampler_;
  std::vector<std::vector<Words>> references_;  // per scene
  DocumentFrequencies df_;
};

}  // namespace smart
