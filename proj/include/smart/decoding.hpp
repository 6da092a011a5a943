#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "smart/model.hpp"
#include "smart/tokens.hpp"

namespace smart {

/// Generated tokens exclude BOS and include the terminating EOS, if any.
struct BeamHypothesis {
  std::vector<int> tokens;
  double logprob_sum = 0.0;
  std::vector<double> step_logprobs;
  bool finished = false;
};

/// Log-probabilities over the vocabulary for the token following `prefix`
/// (generated tokens so far, BOS excluded).
using StepScorer = std::function<std::vector<double>(std::span<const int> prefix)>;

struct SearchOptions {
  std::size_t beam_size = 1;
  std::size_t max_len = 20;  // maximum generated tokens, EOS included
  int eos = tokens::kEos;
  /// Tokens never proposed as candidates. Scores are left untouched.
  std::vector<int> banned;
  /// When false, EOS does not end a hypothesis (fixed-length decoding).
  bool stop_at_eos = true;
};

/// Strict ordering used for ranking: higher log-probability first, then the
/// lexicographically smaller token sequence (lower ids, then shorter).
bool ranks_before(const BeamHypothesis& a, const BeamHypothesis& b);

BeamHypothesis greedy_decode(const StepScorer& scorer, std::size_t vocab_size,
                             const SearchOptions& options);

/// Beam search without length normalisation. Finished hypotheses stay in the
/// pool and compete with live ones; duplicate sequences are collapsed.
/// Returns up to beam_size hypotheses ranked by ranks_before.
std::vector<BeamHypothesis> beam_search(const StepScorer& scorer, std::size_t vocab_size,
                                        const SearchOptions& options);

/// Scorer over a trained model given its encoder output (eval mode, no tape).
StepScorer model_scorer(const Model& model, const Tensor& memory,
                        std::span<const std::uint8_t> memory_valid = {});

/// Options for model decoding: PAD and BOS are banned.
SearchOptions model_search_options(const Model& model, std::size_t beam_size, std::size_t max_len);

BeamHypothesis greedy_decode(const Model& model, const Tensor& memory, std::size_t max_len);
std::vector<BeamHypothesis> beam_search(const Model& model, const Tensor& memory,
                                        std::size_t beam_size, std::size_t max_len);

/// Teacher-forced log p(tokens | memory) as a differentiable scalar.
/// `tokens` are generated tokens (no BOS).
Tensor sequence_logprob(const Model& model, const Tensor& memory,
                        std::span<const std::uint8_t> memory_valid, std::span<const int> tokens,
                        ForwardContext& ctx);

struct ScstSample {
  BeamHypothesis hypothesis;
  Tensor logprob;  // scalar on the active tape
};

/// Beam search (eval-mode forward, not recorded) followed by differentiable
/// rescoring of every hypothesis under `ctx` on the active tape.
/// Requires ctx.mode == kTrain and an active tape.
std::vector<ScstSample> sample_for_scst(const Model& model, const Tensor& regions,
                                        std::span<const std::uint8_t> region_valid,
                                        std::size_t beam_size, std::size_t max_len,
                                        ForwardContext& ctx);

}  // namespace smart
