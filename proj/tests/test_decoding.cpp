#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "smart/decoding.hpp"
#include "smart/errors.hpp"
#include "smart/grad_check.hpp"
#include "test_util.hpp"

using namespace smart;
using test::random_tensor;

namespace {

std::vector<double> log_normalize(std::vector<double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  for (double& l : logits) l = l - mx - std::log(z);
  return logits;
}

// Scores depend only on the step index.
StepScorer position_scorer(const std::vector<std::vector<double>>& table) {
  return [table](std::span<const int> prefix) { return table.at(prefix.size()); };
}

// Scores depend on the whole prefix; drawn lazily and memoised.
StepScorer prefix_scorer(std::uint64_t seed, std::size_t vocab) {
  auto cache = std::make_shared<std::map<std::vector<int>, std::vector<double>>>();
  return [=](std::span<const int> prefix) {
    std::vector<int> key(prefix.begin(), prefix.end());
    auto it = cache->find(key);
    if (it != cache->end()) return it->second;
    Rng rng(seed ^ (key.size() * 0x9E3779B97F4A7C15ULL));
    for (int t : key) rng = Rng(rng.next_u64() + static_cast<std::uint64_t>(t) * 7919);
    std::vector<double> l(vocab);
    for (double& v : l) v = 2.0 * rng.normal();
    return (*cache)[key] = log_normalize(l);
  };
}

// Every complete sequence: ends at the first EOS or has max_len tokens.
std::vector<BeamHypothesis> enumerate(const StepScorer& scorer, std::size_t vocab, std::size_t max_len,
                                      int eos) {
  std::vector<BeamHypothesis> out;
  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<BeamHypothesis> next;
    for (const auto& h : live) {
      const auto lp = scorer(h.tokens);
      for (std::size_t w = 0; w < vocab; ++w) {
        BeamHypothesis e = h;
        e.tokens.push_back(static_cast<int>(w));
        e.step_logprobs.push_back(lp[w]);
        e.logprob_sum += lp[w];
        if (static_cast<int>(w) == eos || step + 1 == max_len) {
          e.finished = true;
          out.push_back(e);
        } else {
          next.push_back(e);
        }
      }
    }
    live = std::move(next);
  }
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

void check_hypothesis_invariants(const BeamHypothesis& h, std::size_t max_len, int eos) {
  double s = 0.0;
  for (double l : h.step_logprobs) s += l;
  CHECK(std::abs(s - h.logprob_sum) <= 1e-9);
  CHECK(h.step_logprobs.size() == h.tokens.size());
  CHECK(h.tokens.size() <= max_len);
  const auto first_eos = std::find(h.tokens.begin(), h.tokens.end(), eos);
  if (first_eos != h.tokens.end()) CHECK(first_eos + 1 == h.tokens.end());
  const bool ends = !h.tokens.empty() && h.tokens.back() == eos;
  CHECK(h.finished == (ends || h.tokens.size() == max_len));
}

ModelConfig small_config() {
  ModelConfig c;
  c.d = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.memory_slots = 2;
  c.vocab_size = 16;
  c.max_seq_len = 8;
  c.region_feature_dim = 8;
  return c;
}

// Sharpen the output layer so greedy/beam paths vary with the input.
void sharpen(Model& model, std::uint64_t seed) {
  Rng rng(seed);
  for (double& v : model.params().get("out.b").mutable_data()) v = 2.0 * rng.normal();
  for (double& v : model.params().get("out.w").mutable_data()) v *= 4.0;
}

}  // namespace

TEST_CASE("fixed-length beam search equals exhaustive enumeration on position-only scorers") {
  Rng rng(1);
  int cases = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t steps = 1 + rng.below(4);
    std::vector<std::vector<double>> table(steps);
    for (auto& row : table) {
      std::vector<double> l(3);
      for (double& v : l) v = 2.0 * rng.normal();
      row = log_normalize(l);
    }
    const auto scorer = position_scorer(table);
    // eos = -1: no token terminates early, every sequence has `steps` tokens.
    const auto all = enumerate(scorer, 3, steps, -1);
    for (std::size_t k : {1, 2, 3}) {
      SearchOptions o;
      o.beam_size = k;
      o.max_len = steps;
      o.stop_at_eos = false;
      const auto beams = beam_search(scorer, 3, o);
      REQUIRE(beams.size() == std::min(k, all.size()));
      for (std::size_t i = 0; i < beams.size(); ++i) {
        CHECK(beams[i].tokens == all[i].tokens);
        CHECK(beams[i].logprob_sum == doctest::Approx(all[i].logprob_sum).epsilon(1e-14));
      }
      ++cases;
    }
  }
  CHECK(cases == 600);
}

TEST_CASE("EOS-terminated search: full-width two-step search is exhaustive") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t steps = 1 + rng.below(2);
    const auto scorer = prefix_scorer(rng.next_u64(), 3);
    const auto all = enumerate(scorer, 3, steps, 2);
    SearchOptions o;
    o.beam_size = 3;
    o.max_len = steps;
    o.eos = 2;
    const auto beams = beam_search(scorer, 3, o);
    REQUIRE(beams.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(beams[i].tokens == all[i].tokens);
      check_hypothesis_invariants(beams[i], steps, 2);
    }
  }
}

TEST_CASE("EOS-terminated search: hypotheses are complete sequences with exact scores") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t steps = 1 + rng.below(4);
    const auto scorer = prefix_scorer(rng.next_u64(), 3);
    const auto all = enumerate(scorer, 3, steps, 2);
    for (std::size_t k : {1, 2, 3}) {
      SearchOptions o;
      o.beam_size = k;
      o.max_len = steps;
      o.eos = 2;
      const auto beams = beam_search(scorer, 3, o);
      for (const auto& h : beams) {
        check_hypothesis_invariants(h, steps, 2);
        const auto it = std::find_if(all.begin(), all.end(), [&](const auto& e) { return e.tokens == h.tokens; });
        REQUIRE(it != all.end());
        CHECK(h.logprob_sum == doctest::Approx(it->logprob_sum).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("narrow beams can miss an early EOS (pruned before it finishes)") {
  // Step-0 probabilities (0.5, 0.3, 0.2) with EOS = 2: k=2 keeps only tokens
  // 0 and 1, so the complete sequence {2} (p=0.2) never enters the pool even
  // though it outranks {1,0} (p=0.18).
  const std::vector<std::vector<double>> table{{std::log(0.5), std::log(0.3), std::log(0.2)},
                                               {std::log(0.6), std::log(0.1), std::log(0.3)}};
  SearchOptions o;
  o.beam_size = 2;
  o.max_len = 2;
  o.eos = 2;
  const auto b = beam_search(position_scorer(table), 3, o);
  REQUIRE(b.size() == 2);
  CHECK(b[0].tokens == std::vector<int>{0, 0});
  CHECK(b[1].tokens == std::vector<int>{1, 0});
}

TEST_CASE("hand-set 2-step, 3-token case") {
  // p(step0) = (0.5, 0.3, 0.2), p(step1) = (0.6, 0.1, 0.3); token 2 is EOS.
  const std::vector<std::vector<double>> table{{std::log(0.5), std::log(0.3), std::log(0.2)},
                                               {std::log(0.6), std::log(0.1), std::log(0.3)}};
  SearchOptions o;
  o.beam_size = 3;
  o.max_len = 2;
  o.eos = 2;
  const auto b = beam_search(position_scorer(table), 3, o);
  // Complete sequences: 00 .30, 01 .05, 02 .15, 10 .18, 11 .03, 12 .09, 2 .20
  REQUIRE(b.size() == 3);
  CHECK(b[0].tokens == std::vector<int>{0, 0});
  CHECK(b[1].tokens == std::vector<int>{2});
  CHECK(b[2].tokens == std::vector<int>{1, 0});
  CHECK(std::exp(b[0].logprob_sum) == doctest::Approx(0.30));
  CHECK(std::exp(b[1].logprob_sum) == doctest::Approx(0.20));
  CHECK(std::exp(b[2].logprob_sum) == doctest::Approx(0.18));
}

TEST_CASE("k=1 beam equals greedy; results are ranked and distinct") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto scorer = prefix_scorer(seed, 5);
    SearchOptions o;
    o.max_len = 6;
    o.eos = 2;
    const auto g = greedy_decode(scorer, 5, o);
    const auto b1 = beam_search(scorer, 5, o);
    REQUIRE(b1.size() == 1);
    CHECK(b1[0].tokens == g.tokens);
    CHECK(b1[0].logprob_sum == g.logprob_sum);
    check_hypothesis_invariants(g, 6, 2);

    o.beam_size = 4;
    const auto b = beam_search(scorer, 5, o);
    std::set<std::vector<int>> seen;
    for (std::size_t i = 0; i < b.size(); ++i) {
      check_hypothesis_invariants(b[i], 6, 2);
      CHECK(seen.insert(b[i].tokens).second);
      if (i > 0) CHECK(b[i - 1].logprob_sum >= b[i].logprob_sum);
    }
  }
}

TEST_CASE("ranking ties: lower ids, then shorter") {
  BeamHypothesis a{{1, 2}, -1.0, {}, true}, b{{1, 3}, -1.0, {}, true}, c{{1}, -1.0, {}, true};
  CHECK(ranks_before(a, b));
  CHECK(ranks_before(c, a));
  CHECK_FALSE(ranks_before(a, a));
  BeamHypothesis d{{5}, -0.5, {}, true};
  CHECK(ranks_before(d, c));
}

TEST_CASE("search options: banned tokens, fixed length, errors") {
  const auto scorer = prefix_scorer(9, 6);
  SearchOptions o;
  o.beam_size = 3;
  o.max_len = 5;
  o.banned = {0, 4};
  for (const auto& h : beam_search(scorer, 6, o))
    for (int t : h.tokens) CHECK((t != 0 && t != 4));
  o.stop_at_eos = false;
  o.banned.clear();
  for (const auto& h : beam_search(scorer, 6, o)) CHECK(h.tokens.size() == 5);

  o.beam_size = 0;
  CHECK_THROWS_AS(beam_search(scorer, 6, o), UsageError);
  o.beam_size = 7;
  CHECK_THROWS_AS(beam_search(scorer, 6, o), UsageError);
  o.beam_size = 2;
  o.max_len = 0;
  CHECK_THROWS_AS(beam_search(scorer, 6, o), UsageError);
}

TEST_CASE("model beam search: teacher-forced rescoring reproduces logprob_sum") {
  Model model(small_config(), 3);
  sharpen(model, 30);
  Rng rng(4);
  for (int img = 0; img < 5; ++img) {
    ForwardContext ctx;
    const Tensor mem = model.encode(random_tensor({4, 8}, rng), ctx);
    const auto beams = beam_search(model, mem, 3, 7);
    CHECK(beams.size() == 3);
    for (const auto& h : beams) {
      check_hypothesis_invariants(h, 7, tokens::kEos);
      for (int t : h.tokens) CHECK((t != tokens::kPad && t != tokens::kBos));
      const double lp = sequence_logprob(model, mem, {}, h.tokens, ctx).item();
      CHECK(std::abs(lp - h.logprob_sum) <= 1e-5);
    }
    const auto g = greedy_decode(model, mem, 7);
    CHECK(g.tokens == beam_search(model, mem, 1, 7)[0].tokens);
  }
}

TEST_CASE("model beam search: independent of batch neighbours and region padding") {
  Model model(small_config(), 5);
  sharpen(model, 50);
  Rng rng(6);
  const Tensor a = random_tensor({3, 8}, rng), other = random_tensor({4, 8}, rng);
  ForwardContext ctx;
  const auto alone = beam_search(model, model.encode(a, ctx), 3, 7);
  beam_search(model, model.encode(other, ctx), 3, 7);
  // Batched layout: regions padded to the widest image with invalid rows.
  const Tensor padded = concat_rows(a, random_tensor({1, 8}, rng, 3.0));
  const std::uint8_t valid[] = {1, 1, 1, 0};
  const Tensor mem = model.encode(padded, valid, ctx);
  SearchOptions o = model_search_options(model, 3, 7);
  const auto batched = beam_search(model_scorer(model, mem, valid), model.config().vocab_size, o);
  REQUIRE(alone.size() == batched.size());
  for (std::size_t i = 0; i < alone.size(); ++i) {
    CHECK(alone[i].tokens == batched[i].tokens);
    CHECK(alone[i].logprob_sum == doctest::Approx(batched[i].logprob_sum).epsilon(1e-12));
  }
}

TEST_CASE("model options cap length at max_seq_len") {
  Model model(small_config(), 7);
  ForwardContext ctx;
  Rng rng(8);
  const Tensor mem = model.encode(random_tensor({2, 8}, rng), ctx);
  for (const auto& h : beam_search(model, mem, 2, 50)) CHECK(h.tokens.size() <= 8);
}

TEST_CASE("sample_for_scst: preconditions") {
  Model model(small_config(), 9);
  Rng rng(10);
  const Tensor regions = random_tensor({3, 8}, rng);
  ForwardContext eval;
  Tape tape;
  {
    Tape::Recording rec(tape);
    CHECK_THROWS_AS(sample_for_scst(model, regions, {}, 3, 6, eval), UsageError);
  }
  ForwardContext train{Mode::kTrain, 1, 0, 0};
  CHECK_THROWS_AS(sample_for_scst(model, regions, {}, 3, 6, train), UsageError);
}

TEST_CASE("sample_for_scst: same tokens as beam search, differentiable log-probs") {
  ModelConfig c = small_config();
  Model model(c, 11);
  Rng rng(12);
  const Tensor regions = random_tensor({3, 8}, rng);
  ForwardContext eval;
  const auto beams = beam_search(model, model.encode(regions, eval), 4, 6);

  Tape tape;
  std::vector<ScstSample> samples;
  Tensor total;
  {
    Tape::Recording rec(tape);
    ForwardContext train{Mode::kTrain, 5, 3, 0};
    samples = sample_for_scst(model, regions, {}, 4, 6, train);
    total = samples[0].logprob;
    for (std::size_t i = 1; i < samples.size(); ++i) total = add(total, samples[i].logprob);
  }
  REQUIRE(samples.size() == beams.size());
  std::set<std::vector<int>> distinct;
  for (std::size_t i = 0; i < beams.size(); ++i) {
    CHECK(samples[i].hypothesis.tokens == beams[i].tokens);
    distinct.insert(samples[i].hypothesis.tokens);
  }
  CHECK(distinct.size() == samples.size());

  model.params().zero_grad();
  backward(tape, total);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : model.params().all()) analytic.emplace_back(p.value.grad().begin(), p.value.grad().end());

  // Numeric side: independent recomputation with the same dropout keys.
  auto loss = [&] {
    ForwardContext train{Mode::kTrain, 5, 3, 0};
    const Tensor mem = model.encode(regions, train);
    Tensor s;
    for (const auto& smp : samples) {
      const Tensor lp = sequence_logprob(model, mem, {}, smp.hypothesis.tokens, train);
      s = s.defined() ? add(s, lp) : lp;
    }
    return s;
  };
  CHECK(loss().item() == doctest::Approx(total.item()).epsilon(1e-12));
  GradCheckOptions o;
  o.max_coords_per_param = 40;
  const auto report = grad_check_against(loss, model.params(), analytic, o);
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.passed);
}
