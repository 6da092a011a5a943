#include "smart/decoding.hpp"

#include <algorithm>
#include <numeric>

#include "smart/errors.hpp"

namespace smart {

bool ranks_before(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.logprob_sum != b.logprob_sum) return a.logprob_sum > b.logprob_sum;
  return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(), b.tokens.begin(),
                                      b.tokens.end());
}

namespace {

void check_scores(const std::vector<double>& lp, std::size_t vocab_size) {
  if (lp.size() != vocab_size) {
    throw ShapeError("scorer returned " + std::to_string(lp.size()) + " scores for a vocabulary of " +
                     std::to_string(vocab_size));
  }
}

bool is_banned(const SearchOptions& o, int token) {
  return std::find(o.banned.begin(), o.banned.end(), token) != o.banned.end();
}

// Indices of the `k` best allowed tokens, ties broken by lower id.
std::vector<int> top_tokens(const std::vector<double>& lp, std::size_t k, const SearchOptions& o) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < lp.size(); ++i)
    if (!is_banned(o, static_cast<int>(i))) ids.push_back(static_cast<int>(i));
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<long>(k), ids.end(), [&](int a, int b) {
    return lp[static_cast<std::size_t>(a)] != lp[static_cast<std::size_t>(b)]
               ? lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(b)]
               : a < b;
  });
  ids.resize(k);
  return ids;
}

BeamHypothesis extend(const BeamHypothesis& h, int token, double lp, const SearchOptions& o) {
  BeamHypothesis next = h;
  next.tokens.push_back(token);
  next.step_logprobs.push_back(lp);
  next.logprob_sum += lp;
  next.finished = (o.stop_at_eos && token == o.eos) || next.tokens.size() >= o.max_len;
  return next;
}

void validate(const SearchOptions& o, std::size_t vocab_size) {
  if (o.max_len == 0) throw UsageError("decoding: max_len must be positive");
  if (o.beam_size < 1 || o.beam_size > vocab_size) {
    throw UsageError("beam size " + std::to_string(o.beam_size) + " outside [1, " +
                     std::to_string(vocab_size) + "]");
  }
}

}  // namespace

BeamHypothesis greedy_decode(const StepScorer& scorer, std::size_t vocab_size,
                             const SearchOptions& options) {
  SearchOptions o = options;
  o.beam_size = 1;
  validate(o, vocab_size);
  BeamHypothesis h;
  while (!h.finished) {
    const auto lp = scorer(h.tokens);
    check_scores(lp, vocab_size);
    const auto best = top_tokens(lp, 1, o);
    if (best.empty()) throw UsageError("decoding: every token is banned");
    h = extend(h, best[0], lp[static_cast<std::size_t>(best[0])], o);
  }
  return h;
}

std::vector<BeamHypothesis> beam_search(const StepScorer& scorer, std::size_t vocab_size,
                                        const SearchOptions& options) {
  validate(options, vocab_size);
  const std::size_t k = options.beam_size;
  std::vector<BeamHypothesis> beams(1);
  while (std::any_of(beams.begin(), beams.end(), [](const auto& h) { return !h.finished; })) {
    std::vector<BeamHypothesis> pool;
    for (const auto& h : beams) {
      if (h.finished) {
        pool.push_back(h);
        continue;
      }
      const auto lp = scorer(h.tokens);
      check_scores(lp, vocab_size);
      for (int t : top_tokens(lp, k, options)) {
        pool.push_back(extend(h, t, lp[static_cast<std::size_t>(t)], options));
      }
    }
    std::sort(pool.begin(), pool.end(), ranks_before);
    pool.erase(std::unique(pool.begin(), pool.end(),
                           [](const auto& a, const auto& b) { return a.tokens == b.tokens; }),
               pool.end());
    if (pool.empty()) throw UsageError("decoding: every token is banned");
    if (pool.size() > k) pool.resize(k);
    beams = std::move(pool);
  }
  return beams;
}

StepScorer model_scorer(const Model& model, const Tensor& memory,
                        std::span<const std::uint8_t> memory_valid) {
  std::vector<std::uint8_t> valid(memory_valid.begin(), memory_valid.end());
  return [&model, memory, valid = std::move(valid)](std::span<const int> prefix) {
    Tape::Paused paused;
    std::vector<int> inputs;
    inputs.reserve(prefix.size() + 1);
    inputs.push_back(tokens::kBos);
    inputs.insert(inputs.end(), prefix.begin(), prefix.end());
    ForwardContext ctx;
    const Tensor logits = model.decode(inputs, memory, valid, ctx);
    const std::size_t v = logits.cols();
    const std::size_t last = logits.rows() - 1;
    // log-softmax of the final row only.
    Tensor row({1, v}, std::vector<double>(logits.data().begin() + static_cast<long>(last * v),
                                           logits.data().end()));
    const Tensor lp = log_softmax(row);
    return std::vector<double>(lp.data().begin(), lp.data().end());
  };
}

SearchOptions model_search_options(const Model& model, std::size_t beam_size, std::size_t max_len) {
  SearchOptions o;
  o.beam_size = beam_size;
  o.max_len = std::min(max_len, model.config().max_seq_len);
  o.eos = tokens::kEos;
  o.banned = {tokens::kPad, tokens::kBos};
  return o;
}

BeamHypothesis greedy_decode(const Model& model, const Tensor& memory, std::size_t max_len) {
  return greedy_decode(model_scorer(model, memory), model.config().vocab_size,
                       model_search_options(model, 1, max_len));
}

std::vector<BeamHypothesis> beam_search(const Model& model, const Tensor& memory,
                                        std::size_t beam_size, std::size_t max_len) {
  return beam_search(model_scorer(model, memory), model.config().vocab_size,
                     model_search_options(model, beam_size, max_len));
}

Tensor sequence_logprob(const Model& model, const Tensor& memory,
                        std::span<const std::uint8_t> memory_valid, std::span<const int> tokens,
                        ForwardContext& ctx) {
  if (tokens.empty()) throw InputError("sequence_logprob: empty token sequence");
  std::vector<int> inputs{tokens::kBos};
  inputs.insert(inputs.end(), tokens.begin(), tokens.end() - 1);
  const Tensor logits = model.decode(inputs, memory, memory_valid, ctx);
  return sum(pick(log_softmax(logits), tokens));
}

std::vector<ScstSample> sample_for_scst(const Model& model, const Tensor& regions,
                                        std::span<const std::uint8_t> region_valid,
                                        std::size_t beam_size, std::size_t max_len,
                                        ForwardContext& ctx) {
  if (ctx.mode != Mode::kTrain) throw UsageError("sample_for_scst requires training mode");
  if (!Tape::active()) throw UsageError("sample_for_scst requires an active tape");
  std::vector<BeamHypothesis> beams;
  {
    Tape::Paused paused;
    ForwardContext eval_ctx;
    const Tensor memory = model.encode(regions, region_valid, eval_ctx);
    beams = beam_search(model_scorer(model, memory, region_valid), model.config().vocab_size,
                        model_search_options(model, beam_size, max_len));
  }
  const Tensor memory = model.encode(regions, region_valid, ctx);
  std::vector<ScstSample> samples;
  samples.reserve(beams.size());
  for (auto& h : beams) {
    Tensor lp = sequence_logprob(model, memory, region_valid, h.tokens, ctx);
    samples.push_back({std::move(h), std::move(lp)});
  }
  return samples;
}

}  // namespace smart
