#include "smart/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "smart/ops.hpp"
#include "smart/random.hpp"

namespace smart {

double compute_gradients(const std::function<Tensor()>& loss_fn, ParameterSet& params) {
  Tape tape;
  Tensor loss;
  {
    Tape::Recording rec(tape);
    loss = loss_fn();
  }
  params.zero_grad();
  backward(tape, loss);
  return loss.item();
}

namespace {

struct Probe {
  double value;
  std::uint64_t pattern;
};

Probe evaluate(const std::function<Tensor()>& loss_fn) {
  Tape::Paused paused;
  ReluPatternProbe probe;
  const double v = loss_fn().item();
  return {v, probe.signature()};
}

}  // namespace

GradCheckReport grad_check_against(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                                   const std::vector<std::vector<double>>& analytic,
                                   const GradCheckOptions& options) {
  GradCheckReport report;
  Rng rng(options.seed);
  const Probe base = evaluate(loss_fn);
  // Below this magnitude a central difference cannot resolve `tol` relative
  // accuracy: each loss evaluation carries rounding error ~ulp(|f|).
  const double roundoff = options.roundoff_ulps * std::numeric_limits<double>::epsilon() *
                          std::abs(base.value) / (2.0 * options.eps);
  const double floor = std::max(options.abs_floor, roundoff / options.tol);
  auto all = params.all();
  for (std::size_t p = 0; p < all.size(); ++p) {
    ParamGradError err;
    err.name = all[p].name;
    auto values = all[p].value.mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param && coords.size() > options.max_coords_per_param) {
      for (std::size_t i = 0; i < options.max_coords_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords_per_param);
    }
    for (std::size_t idx : coords) {
      const double saved = values[idx];
      values[idx] = saved + options.eps;
      const Probe plus = evaluate(loss_fn);
      values[idx] = saved - options.eps;
      const Probe minus = evaluate(loss_fn);
      values[idx] = saved;
      if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
        ++err.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.eps);
      const double a = analytic[p][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++err.checked;
      if (rel >= err.max_rel_error) {
        err.max_rel_error = rel;
        err.worst_index = idx;
        err.analytic = a;
        err.numeric = numeric;
      }
    }
    if (err.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = err.max_rel_error;
      report.worst_param = err.name;
      report.worst_index = err.worst_index;
    }
    report.per_param.push_back(std::move(err));
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                           const GradCheckOptions& options) {
  compute_gradients(loss_fn, params);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params.all()) {
    analytic.emplace_back(p.value.grad().begin(), p.value.grad().end());
  }
  return grad_check_against(loss_fn, params, analytic, options);
}

}  // namespace smart
