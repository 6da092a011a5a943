#include <cmath>

#include "doctest.h"
#include "smart/attention.hpp"
#include "smart/errors.hpp"
#include "smart/grad_check.hpp"
#include "smart/ops.hpp"
#include "test_util.hpp"

using namespace smart;
using test::matrix;
using test::random_tensor;

namespace {

MultiHeadParams random_mha(std::size_t d, std::size_t heads, std::size_t m, Rng& rng,
                           ParameterSet& ps) {
  return init_multi_head(ps, "attn", d, heads, m, rng);
}

// Plain multi-head attention without any memory handling.
Tensor reference_mha(const Tensor& q_seq, const Tensor& kv_seq, const MultiHeadParams& p,
                     const AttentionMask* mask) {
  const Tensor q = matmul(q_seq, p.wq), k = matmul(kv_seq, p.wk), v = matmul(kv_seq, p.wv);
  std::vector<Tensor> heads;
  const std::size_t dh = p.head_dim();
  for (std::size_t h = 0; h < p.heads; ++h) {
    heads.push_back(scaled_dot_attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh),
                                         slice_cols(v, h * dh, dh), mask)
                        .out);
  }
  return matmul(concat_cols(heads), p.wo);
}

void check_distribution(const Tensor& w) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) {
      CHECK(w.at(r, c) >= 0.0);
      s += w.at(r, c);
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

}  // namespace

TEST_CASE("scaled_dot_attention: single key takes all the weight") {
  const auto r = scaled_dot_attention(matrix(2, 2, {1, 2, -3, 0.5}), matrix(1, 2, {0.3, -0.7}),
                                      matrix(1, 2, {4, 5}));
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(r.weights.at(t, 0) == 1.0);
    CHECK(r.out.at(t, 0) == 4.0);
    CHECK(r.out.at(t, 1) == 5.0);
  }
}

TEST_CASE("scaled_dot_attention: dominant diagonal gives identity weights") {
  const double s = 100.0;
  const Tensor q = matrix(3, 3, {s, 0, 0, 0, s, 0, 0, 0, s});
  const Tensor v = matrix(3, 2, {1, 2, 3, 4, 5, 6});
  const auto r = scaled_dot_attention(q, q, v);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(r.weights.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));
    for (std::size_t c = 0; c < 2; ++c) CHECK(r.out.at(i, c) == doctest::Approx(v.at(i, c)));
  }
}

TEST_CASE("scaled_dot_attention: hand-computed 2x3 case") {
  // Oracle: softmax([[1,0,1],[0,1,1]] / sqrt 2) computed independently.
  const auto r = scaled_dot_attention(matrix(2, 2, {1, 0, 0, 1}), matrix(3, 2, {1, 0, 0, 1, 1, 1}),
                                      matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  const double big = 0.4011120926797859, small = 0.1977758146404282;
  const double expected_w[] = {big, small, big, small, big, big};
  for (std::size_t i = 0; i < 6; ++i) CHECK(r.weights.data()[i] == doctest::Approx(expected_w[i]).epsilon(1e-14));
  const double expected_out[] = {3.0, 4.0, 3.4066725560787154, 4.406672556078716};
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.out.data()[i] == doctest::Approx(expected_out[i]).epsilon(1e-14));
}

TEST_CASE("masked attention: masked weights are exactly zero, empty rows rejected") {
  Rng rng(1);
  const Tensor q = random_tensor({4, 3}, rng), k = random_tensor({4, 3}, rng),
               v = random_tensor({4, 3}, rng);
  const AttentionMask causal = AttentionMask::causal(4);
  const auto r = scaled_dot_attention(q, k, v, &causal);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) CHECK(r.weights.at(i, j) == 0.0);
  check_distribution(r.weights);

  AttentionMask empty_row(2, 4);
  for (std::size_t c = 0; c < 4; ++c) empty_row.set(1, c, false);
  CHECK_THROWS_AS(scaled_dot_attention(slice_cols(q, 0, 3), k, v, &empty_row), ShapeError);
  const Tensor q2 = matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(scaled_dot_attention(q2, k, v, &empty_row), InputError);
}

TEST_CASE("causal mask is lower triangular; key padding closes columns") {
  const auto c = AttentionMask::causal(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(c.allowed(i, j) == (j <= i));
  const std::uint8_t valid[] = {1, 0, 1};
  const auto p = AttentionMask::key_padding(2, valid);
  CHECK(p.allowed(0, 0));
  CHECK_FALSE(p.allowed(1, 1));
  const auto wide = (c & AttentionMask::key_padding(3, valid)).with_open_columns(2);
  CHECK(wide.cols() == 5);
  CHECK_FALSE(wide.allowed(2, 1));
  CHECK(wide.allowed(0, 3));
  CHECK(wide.allowed(0, 4));
}

TEST_CASE("multi_head_attention: hand-computed H=2, d=4, N=2, M=1") {
  MultiHeadParams p;
  p.heads = 2;
  p.wq = matrix(4, 4, {1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 0, 0, 0, 0, 1, 1});
  p.wk = matrix(4, 4, {0, 1, 1, 0, 1, 0, 0, 1, 0, 0, 1, 1, 1, 1, 0, 0});
  p.wv = matrix(4, 4, {1, 2, 0, 0, 0, 1, 2, 0, 0, 0, 1, 2, 2, 0, 0, 1});
  p.wo = matrix(4, 4, {1, 0, 0, 0, 0, 1, 0, 1, 1, 0, 1, 0, 0, 0, 0, 1});
  p.memory_keys = matrix(1, 4, {1, -1, 0, 1});
  p.memory_values = matrix(1, 4, {2, 0, -1, 1});
  const Tensor x = matrix(2, 4, {1, 0, 1, 0, 0, 2, 0, 1});
  std::vector<Tensor> weights;
  const Tensor out = multi_head_attention(x, x, p, nullptr, &weights);
  // Oracle values from a step-by-step evaluation of the same arithmetic.
  const double expected_out[] = {3.999991211551035, 1.9720636752256397, 2.0139593739382153,
                                 3.2203187534833626, 2.570595378660118, 1.9425908585213323,
                                 1.0562430932904512, 3.9008924819878064};
  for (std::size_t i = 0; i < 8; ++i) CHECK(out.data()[i] == doctest::Approx(expected_out[i]).epsilon(1e-13));
  const double w0[] = {0.01396816238718019, 0.9720636752256396, 0.01396816238718019,
                       0.48564771463033307, 0.48564771463033307, 0.02870457073933372};
  const double w1[] = {0.2482550782577231, 0.5034898434845538, 0.2482550782577231,
                       0.9583016234664741, 0.0279279692715006, 0.01377040726202527};
  REQUIRE(weights.size() == 2);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(weights[0].data()[i] == doctest::Approx(w0[i]).epsilon(1e-13));
    CHECK(weights[1].data()[i] == doctest::Approx(w1[i]).epsilon(1e-13));
  }
}

TEST_CASE("multi_head_attention: M=0 is bit-equal to plain attention") {
  Rng rng(2);
  ParameterSet ps;
  const auto p = random_mha(8, 2, 0, rng, ps);
  CHECK(p.memory_slots() == 0);
  CHECK_FALSE(ps.contains("attn.memory_keys"));
  const Tensor q = random_tensor({3, 8}, rng), kv = random_tensor({5, 8}, rng);
  const Tensor a = multi_head_attention(q, kv, p);
  const Tensor b = reference_mha(q, kv, p, nullptr);
  CHECK(test::max_abs_diff(a.data(), b.data()) == 0.0);
  const auto causal = AttentionMask::causal(5);
  const Tensor c = multi_head_attention(kv, kv, p, &causal);
  const Tensor d = reference_mha(kv, kv, p, &causal);
  CHECK(test::max_abs_diff(c.data(), d.data()) == 0.0);
}

TEST_CASE("multi_head_attention: zero memory keys share the weight of zero-score keys") {
  Rng rng(3);
  ParameterSet ps;
  auto p = random_mha(4, 2, 2, rng, ps);
  for (double& v : p.memory_keys.mutable_data()) v = 0.0;
  // Row 0 of kv is zero, so its key scores 0 exactly like the memory keys.
  const Tensor kv = matrix(2, 4, {0, 0, 0, 0, 0.3, -1.2, 0.7, 2.0});
  const Tensor q = random_tensor({3, 4}, rng);
  std::vector<Tensor> weights;
  multi_head_attention(q, kv, p, nullptr, &weights);
  for (const auto& w : weights) {
    CHECK(w.cols() == 4);
    check_distribution(w);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      CHECK(w.at(r, 2) == doctest::Approx(w.at(r, 0)).epsilon(1e-15));
      CHECK(w.at(r, 3) == doctest::Approx(w.at(r, 0)).epsilon(1e-15));
    }
  }
}

TEST_CASE("memory slots: weights over N+M columns form distributions, memory always open") {
  Rng rng(4);
  ParameterSet ps;
  const auto p = random_mha(8, 4, 3, rng, ps);
  const Tensor x = random_tensor({5, 8}, rng, 3.0);
  const auto causal = AttentionMask::causal(5);
  std::vector<Tensor> weights;
  multi_head_attention(x, x, p, &causal, &weights);
  REQUIRE(weights.size() == 4);
  for (const auto& w : weights) {
    CHECK(w.cols() == 8);
    check_distribution(w);
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = r + 1; c < 5; ++c) CHECK(w.at(r, c) == 0.0);
      for (std::size_t c = 5; c < 8; ++c) CHECK(w.at(r, c) > 0.0);
    }
  }
}

TEST_CASE("memory slots: input-independent and keys independent of values") {
  Rng rng(5);
  ParameterSet ps;
  const auto p = random_mha(8, 2, 4, rng, ps);
  const std::vector<double> keys(p.memory_keys.data().begin(), p.memory_keys.data().end());
  const std::vector<double> values(p.memory_values.data().begin(), p.memory_values.data().end());
  const Tensor x1 = random_tensor({3, 8}, rng), x2 = random_tensor({6, 8}, rng);
  const Tensor out1 = multi_head_attention(x1, x1, p);
  multi_head_attention(x2, x2, p);
  CHECK(test::max_abs_diff(keys, p.memory_keys.data()) == 0.0);
  CHECK(test::max_abs_diff(values, p.memory_values.data()) == 0.0);

  Tensor k = p.memory_keys;
  k.mutable_data()[3] += 0.5;
  CHECK(test::max_abs_diff(values, p.memory_values.data()) == 0.0);
  const Tensor out2 = multi_head_attention(x1, x1, p);
  CHECK(test::max_abs_diff(out1.data(), out2.data()) > 0.0);
}

TEST_CASE("causal attention: row t ignores key/value rows after t") {
  Rng rng(6);
  ParameterSet ps;
  const auto p = random_mha(8, 2, 0, rng, ps);
  const auto causal = AttentionMask::causal(6);
  const Tensor q = random_tensor({6, 8}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor kv = random_tensor({6, 8}, rng);
    const std::size_t t = static_cast<std::size_t>(rng.below(5));
    Tensor kv2 = kv.clone();
    for (std::size_t r = t + 1; r < 6; ++r)
      for (std::size_t c = 0; c < 8; ++c) kv2.mutable_data()[r * 8 + c] = 10.0 * rng.normal();
    const Tensor a = multi_head_attention(q, kv, p, &causal);
    const Tensor b = multi_head_attention(q, kv2, p, &causal);
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t c = 0; c < 8; ++c) CHECK(a.at(r, c) == b.at(r, c));
  }
}

TEST_CASE("permuting keys/values with the mask permutes weights, not outputs") {
  Rng rng(7);
  ParameterSet ps;
  const auto p = random_mha(6, 3, 2, rng, ps);
  const Tensor q = random_tensor({3, 6}, rng), kv = random_tensor({4, 6}, rng);
  AttentionMask mask(3, 4);
  mask.set(0, 1, false);
  mask.set(2, 3, false);
  const std::size_t perm[] = {2, 0, 3, 1};
  Tensor kv_p = Tensor::zeros({4, 6});
  AttentionMask mask_p(3, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 6; ++c) kv_p.mutable_data()[i * 6 + c] = kv.at(perm[i], c);
    for (std::size_t r = 0; r < 3; ++r) mask_p.set(r, i, mask.allowed(r, perm[i]));
  }
  std::vector<Tensor> w, w_p;
  const Tensor a = multi_head_attention(q, kv, p, &mask, &w);
  const Tensor b = multi_head_attention(q, kv_p, p, &mask_p, &w_p);
  CHECK(test::max_abs_diff(a.data(), b.data()) < 1e-12);
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t i = 0; i < 4; ++i)
        CHECK(w_p[h].at(r, i) == doctest::Approx(w[h].at(r, perm[i])).epsilon(1e-12));
}

TEST_CASE("memory_param_count: formula and enumeration agree") {
  CHECK(memory_param_count(512, 8, 0).slots == 0);
  CHECK(memory_param_count(512, 8, 0).scalars == 0);
  CHECK(memory_param_count(512, 8, 40).slots == 640);
  CHECK(memory_param_count(512, 8, 40).scalars == 40960);
  for (std::size_t m : {0, 1, 5, 20}) {
    Rng rng(8);
    ParameterSet with, without;
    init_multi_head(with, "a", 16, 4, m, rng);
    init_multi_head(without, "a", 16, 4, 0, rng);
    CHECK(with.scalar_count() - without.scalar_count() == memory_param_count(16, 4, m).scalars);
  }
}

TEST_CASE("memory init: projections within the Glorot bound, memory near N(0, 1/sqrt d_h)") {
  Rng rng(9);
  ParameterSet ps;
  const auto p = init_multi_head(ps, "a", 64, 4, 400, rng);
  const double bound = std::sqrt(6.0 / 128.0);
  for (double v : p.wq.data()) CHECK(std::abs(v) <= bound);
  double sq = 0.0;
  for (double v : p.memory_keys.data()) sq += v * v;
  const double sd = std::sqrt(sq / static_cast<double>(p.memory_keys.numel()));
  CHECK(sd == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("multi_head_attention: gradients with memory and mask") {
  Rng rng(10);
  ParameterSet ps;
  const auto p = random_mha(6, 2, 2, rng, ps);
  const Tensor x = ps.add("x", random_tensor({4, 6}, rng));
  const Tensor r = random_tensor({6, 1}, rng);
  const auto causal = AttentionMask::causal(4);
  auto loss = [&] { return sum(matmul(multi_head_attention(x, x, p, &causal), r)); };
  GradCheckOptions o;
  o.tol = 1e-6;
  const auto report = grad_check(loss, ps, o);
  CHECK(report.passed);
}

TEST_CASE("init rejects d not divisible by H") {
  Rng rng(11);
  ParameterSet ps;
  CHECK_THROWS_AS(init_multi_head(ps, "a", 10, 4, 0, rng), ConfigError);
}
