#include "smart/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "smart/errors.hpp"
#include "smart/random.hpp"

namespace smart {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Node = std::shared_ptr<detail::TensorNode>;

thread_local ReluPatternProbe* g_relu_probe = nullptr;

std::string g_fault_op;
double g_fault_factor = 1.0;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_output(Shape shape, std::vector<double> values, bool track) {
  apply_precision(values);
  Tensor out(std::move(shape), std::move(values));
  if (track) out.node()->requires_grad = true;
  return out;
}

void record(std::string_view op, const Tensor& out, std::function<void()> fn) {
  Tape::active()->record(op, out.node(), std::move(fn));
}

// Gradient buffer of an input, or nullptr when it does not require grad.
double* grad_of(const Node& n) {
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  const bool track = tracking({&a, &b});
  Tensor c = make_output({m, n}, std::move(out), track);
  if (track) {
    record("matmul", c, [an = a.node(), bn = b.node(), cn = c.node(), m, k, n] {
      const double f = testing::backward_fault("matmul");
      ConstMap dc(cn->grad.data(), m, n);
      if (double* g = grad_of(an)) {
        MutMap(g, m, k).noalias() += f * (dc * ConstMap(bn->value.data(), k, n).transpose());
      }
      if (double* g = grad_of(bn)) {
        MutMap(g, k, n).noalias() += f * (ConstMap(an->value.data(), m, k).transpose() * dc);
      }
    });
  }
  return c;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_transposed");
  require_matrix(b, "matmul_transposed");
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_transposed: inner dimensions disagree, " +
                     shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), n, k).transpose();
  const bool track = tracking({&a, &b});
  Tensor c = make_output({m, n}, std::move(out), track);
  if (track) {
    record("matmul_transposed", c, [an = a.node(), bn = b.node(), cn = c.node(), m, k, n] {
      const double f = testing::backward_fault("matmul_transposed");
      ConstMap dc(cn->grad.data(), m, n);
      if (double* g = grad_of(an)) {
        MutMap(g, m, k).noalias() += f * (dc * ConstMap(bn->value.data(), n, k));
      }
      if (double* g = grad_of(bn)) {
        MutMap(g, n, k).noalias() += f * (dc.transpose() * ConstMap(an->value.data(), m, k));
      }
    });
  }
  return c;
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const auto m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  MutMap(out.data(), n, m) = ConstMap(x.data().data(), m, n).transpose();
  const bool track = tracking({&x});
  Tensor y = make_output({n, m}, std::move(out), track);
  if (track) {
    record("transpose", y, [xn = x.node(), yn = y.node(), m, n] {
      if (double* g = grad_of(xn)) {
        MutMap(g, m, n) += ConstMap(yn->grad.data(), n, m).transpose();
      }
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  const bool track = tracking({&a, &b});
  Tensor c = make_output(a.shape(), std::move(out), track);
  if (track) {
    record("add", c, [an = a.node(), bn = b.node(), cn = c.node()] {
      const double f = testing::backward_fault("add");
      for (const auto& in : {an, bn}) {
        if (double* g = grad_of(in)) {
          for (std::size_t i = 0; i < cn->grad.size(); ++i) g[i] += f * cn->grad[i];
        }
      }
    });
  }
  return c;
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_matrix(x, "add_row");
  const auto m = x.rows(), n = x.cols();
  if (row.numel() != n) {
    throw ShapeError("add_row: row of " + shape_to_string(row.shape()) + " cannot broadcast over " +
                     shape_to_string(x.shape()));
  }
  std::vector<double> out(m * n);
  const auto xd = x.data(), rd = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] + rd[j];
  const bool track = tracking({&x, &row});
  Tensor y = make_output({m, n}, std::move(out), track);
  if (track) {
    record("add_row", y, [xn = x.node(), rn = row.node(), yn = y.node(), m, n] {
      const double f = testing::backward_fault("add_row");
      const auto& dy = yn->grad;
      if (double* g = grad_of(xn)) {
        for (std::size_t i = 0; i < m * n; ++i) g[i] += f * dy[i];
      }
      if (double* g = grad_of(rn)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += f * dy[i * n + j];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  const bool track = tracking({&x});
  Tensor y = make_output(x.shape(), std::move(out), track);
  if (track) {
    record("scale", y, [xn = x.node(), yn = y.node(), factor] {
      if (double* g = grad_of(xn)) {
        for (std::size_t i = 0; i < yn->grad.size(); ++i) g[i] += factor * yn->grad[i];
      }
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  if (g_relu_probe) g_relu_probe->observe(x.data());
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  const bool track = tracking({&x});
  Tensor y = make_output(x.shape(), std::move(out), track);
  if (track) {
    record("relu", y, [xn = x.node(), yn = y.node()] {
      const double f = testing::backward_fault("relu");
      if (double* g = grad_of(xn)) {
        for (std::size_t i = 0; i < yn->grad.size(); ++i) {
          if (xn->value[i] > 0.0) g[i] += f * yn->grad[i];
        }
      }
    });
  }
  return y;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                     shape_to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  const bool track = tracking({&x});
  Tensor y = make_output(shape, std::move(out), track);
  if (track) {
    record("softmax", y, [xn = x.node(), yn = y.node(), outer, inner, len] {
      const double f = testing::backward_fault("softmax");
      double* g = grad_of(xn);
      if (!g) return;
      const auto& yv = yn->value;
      const auto& dy = yn->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) {
            dot += dy[base + j * inner] * yv[base + j * inner];
          }
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            g[idx] += f * yv[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0 || x.numel() == 0) throw ShapeError("log_softmax: empty tensor");
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.numel() / len;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * len;
    const double mx = *std::max_element(row, row + len);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = row[j] - lse;
  }
  const bool track = tracking({&x});
  Tensor y = make_output(x.shape(), std::move(out), track);
  if (track) {
    record("log_softmax", y, [xn = x.node(), yn = y.node(), rows, len] {
      const double f = testing::backward_fault("log_softmax");
      double* g = grad_of(xn);
      if (!g) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dy = yn->grad.data() + r * len;
        const double* yv = yn->value.data() + r * len;
        double total = 0.0;
        for (std::size_t j = 0; j < len; ++j) total += dy[j];
        for (std::size_t j = 0; j < len; ++j) {
          g[r * len + j] += f * (dy[j] - std::exp(yv[j]) * total);
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias of " + shape_to_string(gain.shape()) + "/" +
                     shape_to_string(bias.shape()) + " do not match last dim of " +
                     shape_to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data(), gd = gain.data(), bd = bias.data();
  std::vector<double> xhat(xd.size()), rstd(rows), out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = gd[j] * h + bd[j];
    }
  }
  const bool track = tracking({&x, &gain, &bias});
  Tensor y = make_output(x.shape(), std::move(out), track);
  if (track) {
    record("layer_norm", y,
           [xn = x.node(), gn = gain.node(), bn = bias.node(), yn = y.node(),
            xhat = std::move(xhat), rstd = std::move(rstd), rows, d] {
             const double f = testing::backward_fault("layer_norm");
             const auto& dy = yn->grad;
             double* gx = grad_of(xn);
             double* gg = grad_of(gn);
             double* gb = grad_of(bn);
             const double inv_d = 1.0 / static_cast<double>(d);
             for (std::size_t r = 0; r < rows; ++r) {
               double mean_dh = 0.0, mean_dh_h = 0.0;
               for (std::size_t j = 0; j < d; ++j) {
                 const std::size_t i = r * d + j;
                 if (gg) gg[j] += f * dy[i] * xhat[i];
                 if (gb) gb[j] += f * dy[i];
                 const double dh = dy[i] * gn->value[j];
                 mean_dh += dh;
                 mean_dh_h += dh * xhat[i];
               }
               if (!gx) continue;
               mean_dh *= inv_d;
               mean_dh_h *= inv_d;
               for (std::size_t j = 0; j < d; ++j) {
                 const std::size_t i = r * d + j;
                 const double dh = dy[i] * gn->value[j];
                 gx[i] += f * rstd[r] * (dh - mean_dh - xhat[i] * mean_dh_h);
               }
             }
           });
  }
  return y;
}

Tensor dropout(const Tensor& x, double keep_prob, Mode mode, DropoutKey key) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ConfigError("dropout keep_prob must be in (0, 1], got " + std::to_string(keep_prob));
  }
  if (mode == Mode::kEval || keep_prob == 1.0) return x;
  const auto xd = x.data();
  std::vector<double> mask(xd.size()), out(xd.size());
  const double inv_keep = 1.0 / keep_prob;
  for (std::size_t i = 0; i < xd.size(); ++i) {
    mask[i] = counter_uniform(key.seed, key.step, key.site, i) < keep_prob ? inv_keep : 0.0;
    out[i] = xd[i] * mask[i];
  }
  const bool track = tracking({&x});
  Tensor y = make_output(x.shape(), std::move(out), track);
  if (track) {
    record("dropout", y, [xn = x.node(), yn = y.node(), mask = std::move(mask)] {
      if (double* g = grad_of(xn)) {
        for (std::size_t i = 0; i < mask.size(); ++i) g[i] += mask[i] * yn->grad[i];
      }
    });
  }
  return y;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const auto m = x.rows(), n = x.cols();
  if (begin + count > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_to_string(x.shape()));
  }
  std::vector<double> out(m * count);
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xd.data() + i * n + begin, count, out.data() + i * count);
  const bool track = tracking({&x});
  Tensor y = make_output({m, count}, std::move(out), track);
  if (track) {
    record("slice_cols", y, [xn = x.node(), yn = y.node(), m, n, begin, count] {
      if (double* g = grad_of(xn)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < count; ++j) g[i * n + begin + j] += yn->grad[i * count + j];
      }
    });
  }
  return y;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw ShapeError("concat_cols: row mismatch " + shape_to_string(parts[0].shape()) + " vs " +
                       shape_to_string(p.shape()));
    }
    n += p.cols();
    track = track || p.requires_grad();
  }
  track = track && Tape::active();
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto c = p.cols();
    const auto pd = p.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(pd.data() + i * c, c, out.data() + i * n + offset);
    offset += c;
  }
  Tensor y = make_output({m, n}, std::move(out), track);
  if (track) {
    std::vector<Node> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    record("concat_cols", y, [nodes = std::move(nodes), yn = y.node(), m, n] {
      std::size_t off = 0;
      for (const auto& pn : nodes) {
        const std::size_t c = pn->shape[1];
        if (double* g = grad_of(pn)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += yn->grad[i * n + off + j];
        }
        off += c;
      }
    });
  }
  return y;
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  require_matrix(top, "concat_rows");
  require_matrix(bottom, "concat_rows");
  if (top.cols() != bottom.cols()) {
    throw ShapeError("concat_rows: column mismatch " + shape_to_string(top.shape()) + " vs " +
                     shape_to_string(bottom.shape()));
  }
  std::vector<double> out;
  out.reserve(top.numel() + bottom.numel());
  out.insert(out.end(), top.data().begin(), top.data().end());
  out.insert(out.end(), bottom.data().begin(), bottom.data().end());
  const bool track = tracking({&top, &bottom});
  Tensor y = make_output({top.rows() + bottom.rows(), top.cols()}, std::move(out), track);
  if (track) {
    record("concat_rows", y, [tn = top.node(), bn = bottom.node(), yn = y.node()] {
      const std::size_t split = tn->value.size();
      if (double* g = grad_of(tn)) {
        for (std::size_t i = 0; i < split; ++i) g[i] += yn->grad[i];
      }
      if (double* g = grad_of(bn)) {
        for (std::size_t i = 0; i < bn->value.size(); ++i) g[i] += yn->grad[split + i];
      }
    });
  }
  return y;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const auto v = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw InputError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                       std::to_string(v));
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  const bool track = tracking({&table});
  Tensor y = make_output({ids.size(), d}, std::move(out), track);
  if (track) {
    record("embedding", y,
           [tn = table.node(), yn = y.node(), ids = std::vector<int>(ids.begin(), ids.end()), d] {
             if (double* g = grad_of(tn)) {
               for (std::size_t i = 0; i < ids.size(); ++i)
                 for (std::size_t j = 0; j < d; ++j)
                   g[static_cast<std::size_t>(ids[i]) * d + j] += yn->grad[i * d + j];
             }
           });
  }
  return y;
}

Tensor pick(const Tensor& x, std::span<const int> cols) {
  require_matrix(x, "pick");
  const auto m = x.rows(), n = x.cols();
  if (cols.size() != m) {
    throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " +
                     shape_to_string(x.shape()));
  }
  std::vector<std::size_t> flat;
  std::vector<double> out;
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] < 0) continue;
    if (static_cast<std::size_t>(cols[i]) >= n) {
      throw InputError("pick: column " + std::to_string(cols[i]) + " out of range for " +
                       shape_to_string(x.shape()));
    }
    flat.push_back(i * n + static_cast<std::size_t>(cols[i]));
    out.push_back(xd[flat.back()]);
  }
  if (out.empty()) throw InputError("pick: every row was skipped");
  const bool track = tracking({&x});
  const std::size_t count = out.size();
  Tensor y = make_output({count}, std::move(out), track);
  if (track) {
    record("pick", y, [xn = x.node(), yn = y.node(), flat = std::move(flat)] {
      if (double* g = grad_of(xn)) {
        for (std::size_t i = 0; i < flat.size(); ++i) g[flat[i]] += yn->grad[i];
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const bool track = tracking({&x});
  Tensor y = make_output({1}, {total}, track);
  if (track) {
    record("sum", y, [xn = x.node(), yn = y.node()] {
      const double f = testing::backward_fault("sum");
      if (double* g = grad_of(xn)) {
        for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += f * yn->grad[0];
      }
    });
  }
  return y;
}

ReluPatternProbe::ReluPatternProbe() : previous_(g_relu_probe) { g_relu_probe = this; }
ReluPatternProbe::~ReluPatternProbe() { g_relu_probe = previous_; }

void ReluPatternProbe::observe(std::span<const double> pre_activation) {
  for (double v : pre_activation) {
    signature_ = signature_ * 0x100000001b3ULL + (v > 0.0 ? 0x9eULL : 0x37ULL);
  }
}

namespace testing {

void inject_backward_fault(std::string_view op, double factor) {
  g_fault_op = std::string(op);
  g_fault_factor = factor;
}

double backward_fault(std::string_view op) {
  return (!g_fault_op.empty() && g_fault_op == op) ? g_fault_factor : 1.0;
}

}  // namespace testing

}  // namespace smart
