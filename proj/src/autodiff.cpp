#include "tge/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "tge/error.hpp"

namespace tge::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local bool g_no_grad = false;
std::atomic<std::uint64_t> g_next_tape_id{1};

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

std::string shape_str(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

using NodePtr = const detail::Node*;

// C (m x n) += A (m x k) · B (k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C (m x k) += A (m x n) · Bᵀ, with B (k x n)
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// C (k x n) += Aᵀ · B, with A (m x k), B (m x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

template <typename F, typename G>
Tensor unary(const Tensor& a, F forward, G derivative) {
  std::vector<double> out(a.numel());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  NodePtr an = a.node().get();
  return record(a.shape(), std::move(out), {a},
                [an, derivative](std::span<const double> y, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (gi[0].empty()) return;
                  for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * derivative(an->value[i], y[i]);
                });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape[0] * shape[1]) throw ShapeError("Tensor::constant: value count does not match shape");
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) { return constant(shape, std::vector<double>(shape[0] * shape[1], 0.0)); }

Tensor Tensor::variable(Shape shape, std::vector<double> values) {
  Tensor t = constant(shape, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("Tensor::item on a non-scalar " + shape_str(*this));
  return node_->value[0];
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

// ---------------------------------------------------------------- Tape

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)), previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw Error("backward: tape already consumed; run the forward pass again");
  if (!loss.defined() || loss.numel() != 1) throw ShapeError("backward: loss must be a scalar");
  if (loss.node()->tape_id != id_) throw Error("backward: loss is not recorded on this tape (detached graph)");
  consumed_ = true;

  loss.node()->grad.assign(1, 1.0);
  std::vector<std::span<double>> grad_in;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.grad.empty()) continue;  // unreachable from the loss
    grad_in.assign(node.inputs.size(), {});
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      detail::Node& in = *node.inputs[k];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad.assign(in.value.size(), 0.0);
      grad_in[k] = in.grad;
    }
    node.backward(node.value, node.grad, grad_in);
  }
  for (auto& node : nodes_) {
    node->backward = nullptr;
    node->inputs.clear();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }

Tensor record(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn fn) {
  if (values.size() != shape[0] * shape[1]) throw ShapeError("record: value count does not match shape");
  for (double v : values) {
    if (!std::isfinite(v)) throw Error("non-finite value produced in forward pass");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->value = std::move(values);
  Tape* tape = g_no_grad ? nullptr : g_active_tape;
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tape != nullptr && needs_grad) {
    node->requires_grad = true;
    node->tape_id = tape->id_;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(fn);
    tape->nodes_.push_back(node);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ " + shape_str(a) + " vs " + shape_str(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  NodePtr an = a.node().get();
  NodePtr bn = b.node().get();
  return record({m, n}, std::move(out), {a, b},
                [an, bn, m, k, n](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (!gi[0].empty()) gemm_nt(g.data(), bn->value.data(), gi[0].data(), m, n, k);
                  if (!gi[1].empty()) gemm_tn(an->value.data(), g.data(), gi[1].data(), m, k, n);
                });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.cols() == w.rows(), "linear: input width " + shape_str(x) + " does not match weight " + shape_str(w));
  require(b.rows() == 1 && b.cols() == w.cols(), "linear: bias must be 1 x out");
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  std::vector<double> out(m * n);
  const auto bias = b.values();
  for (std::size_t i = 0; i < m; ++i) std::copy(bias.begin(), bias.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  gemm_nn(x.values().data(), w.values().data(), out.data(), m, k, n);
  NodePtr xn = x.node().get();
  NodePtr wn = w.node().get();
  return record({m, n}, std::move(out), {x, w, b},
                [xn, wn, m, k, n](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (!gi[0].empty()) gemm_nt(g.data(), wn->value.data(), gi[0].data(), m, n, k);
                  if (!gi[1].empty()) gemm_tn(xn->value.data(), g.data(), gi[1].data(), m, k, n);
                  if (!gi[2].empty()) {
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < n; ++j) gi[2][j] += g[i * n + j];
                    }
                  }
                });
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return record(a.shape(), std::move(out), {a, b},
                [](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  for (int k = 0; k < 2; ++k) {
                    if (gi[k].empty()) continue;
                    for (std::size_t i = 0; i < g.size(); ++i) gi[k][i] += g[i];
                  }
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return record(a.shape(), std::move(out), {a, b},
                [](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (!gi[0].empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                  }
                  if (!gi[1].empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] -= g[i];
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  NodePtr an = a.node().get();
  NodePtr bn = b.node().get();
  return record(a.shape(), std::move(out), {a, b},
                [an, bn](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (!gi[0].empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * bn->value[i];
                  }
                  if (!gi[1].empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += g[i] * an->value[i];
                  }
                });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x " + std::to_string(a.cols()));
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row.values()[j];
  }
  return record(a.shape(), std::move(out), {a, row},
                [m, n](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (!gi[0].empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                  }
                  if (!gi[1].empty()) {
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < n; ++j) gi[1][j] += g[i * n + j];
                    }
                  }
                });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
  for (double x : a.values()) {
    if (x < 0.0) throw Error("sqrt of a negative value");
  }
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor smooth_l1_terms(const Tensor& d) {
  return unary(
      d, [](double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; },
      [](double x, double) { return std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0); });
}

// ---------------------------------------------------------------- structural

Tensor softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  require(n >= 1, "softmax_rows: need at least one column");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.values().data() + i * n;
    double* o = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return record(a.shape(), std::move(out), {a},
                [m, n](std::span<const double> y, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (gi[0].empty()) return;
                  for (std::size_t i = 0; i < m; ++i) {
                    double dotp = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dotp += g[i * n + j] * y[i * n + j];
                    for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += y[i * n + j] * (g[i * n + j] - dotp);
                  }
                });
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  }
  return record({n, m}, std::move(out), {a},
                [m, n](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (gi[0].empty()) return;
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += g[j * m + i];
                  }
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape[0] * shape[1] == a.numel(), "reshape: element count changes");
  std::vector<double> out(a.values().begin(), a.values().end());
  return record(shape, std::move(out), {a},
                [](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (gi[0].empty()) return;
                  for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rows() == m, "concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.values().data() + i * w, w, out.data() + i * total + off);
    }
    off += w;
  }
  return record({m, total}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                [m, total, widths](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < widths.size(); ++k) {
                    const std::size_t w = widths[k];
                    if (!gi[k].empty()) {
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < w; ++j) gi[k][i * w + j] += g[i * total + off + j];
                      }
                    }
                    off += w;
                  }
                });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::vector<std::size_t> sizes;
  std::vector<double> out;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows: column counts differ");
    sizes.push_back(p.numel());
    rows += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return record({rows, n}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                [sizes](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < sizes.size(); ++k) {
                    if (!gi[k].empty()) {
                      for (std::size_t i = 0; i < sizes[k]; ++i) gi[k][i] += g[off + i];
                    }
                    off += sizes[k];
                  }
                });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require(begin < end && end <= a.cols(), "slice_cols: bad range");
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(a.values().data() + i * n + begin, w, out.data() + i * w);
  return record({m, w}, std::move(out), {a},
                [m, n, w, begin](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (gi[0].empty()) return;
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < w; ++j) gi[0][i * n + begin + j] += g[i * w + j];
                  }
                });
}

Tensor gather_rows(const Tensor& a, std::span<const std::uint32_t> rows) {
  const std::size_t n = a.cols();
  std::vector<double> out(rows.size() * n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < a.rows(), "gather_rows: row index out of range");
    std::copy_n(a.values().data() + rows[r] * n, n, out.data() + r * n);
  }
  std::vector<std::uint32_t> idx(rows.begin(), rows.end());
  return record({rows.size(), n}, std::move(out), {a},
                [idx = std::move(idx), n](std::span<const double>, std::span<const double> g,
                                          std::span<std::span<double>> gi) {
                  if (gi[0].empty()) return;
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    double* dst = gi[0].data() + idx[r] * n;
                    for (std::size_t j = 0; j < n; ++j) dst[j] += g[r * n + j];
                  }
                });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return record({1, 1}, {s}, {a},
                [](std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                  if (gi[0].empty()) return;
                  for (auto& x : gi[0]) x += g[0];
                });
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor group_max_pool(const Tensor& a, std::span<const std::uint32_t> offsets) {
  require(offsets.size() >= 2, "group_max_pool: need at least one group");
  require(offsets.back() == a.rows(), "group_max_pool: offsets must cover all rows");
  const std::size_t groups = offsets.size() - 1;
  const std::size_t n = a.cols();
  std::vector<double> out(groups * n);
  std::vector<std::uint32_t> arg(groups * n);
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    const auto lo = offsets[gidx], hi = offsets[gidx + 1];
    require(hi > lo, "group_max_pool: empty group");
    for (std::size_t j = 0; j < n; ++j) {
      std::uint32_t best = lo;
      double bv = a.values()[lo * n + j];
      for (auto r = lo + 1; r < hi; ++r) {
        const double v = a.values()[r * n + j];
        if (v > bv) {  // strict: first index wins ties
          bv = v;
          best = r;
        }
      }
      out[gidx * n + j] = bv;
      arg[gidx * n + j] = best;
    }
  }
  return record({groups, n}, std::move(out), {a},
                [arg = std::move(arg), n](std::span<const double>, std::span<const double> g,
                                          std::span<std::span<double>> gi) {
                  if (gi[0].empty()) return;
                  for (std::size_t k = 0; k < arg.size(); ++k) gi[0][arg[k] * n + k % n] += g[k];
                });
}

Tensor max_pool_rows(const Tensor& a) {
  require(a.rows() >= 1, "max_pool_rows: empty set");
  const std::uint32_t offsets[2] = {0, static_cast<std::uint32_t>(a.rows())};
  return group_max_pool(a, offsets);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require(heads >= 1, "attention: heads must be >= 1");
  require(q.cols() == k.cols(), "attention: query/key widths differ " + shape_str(q) + " vs " + shape_str(k));
  require(k.rows() == v.rows(), "attention: key/value lengths differ");
  require(q.cols() >= 1 && q.cols() % heads == 0 && v.cols() % heads == 0,
          "attention: widths must be divisible by the head count");
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols(), dv = v.cols();
  const std::size_t dh = d / heads, dvh = dv / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> probs(heads * nq * nk);
  std::vector<double> out(nq * dv, 0.0);
  const double* qv = q.values().data();
  const double* kv = k.values().data();
  const double* vv = v.values().data();
  for (std::size_t h = 0; h < heads; ++h) {
    double* p = probs.data() + h * nq * nk;
    for (std::size_t i = 0; i < nq; ++i) {
      double* pi = p + i * nk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + h * dh + c] * kv[j * d + h * dh + c];
        pi[j] = s * inv;
        mx = std::max(mx, pi[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < nk; ++j) z += (pi[j] = std::exp(pi[j] - mx));
      for (std::size_t j = 0; j < nk; ++j) pi[j] /= z;
      for (std::size_t j = 0; j < nk; ++j) {
        const double w = pi[j];
        for (std::size_t c = 0; c < dvh; ++c) out[i * dv + h * dvh + c] += w * vv[j * dv + h * dvh + c];
      }
    }
  }
  NodePtr qn = q.node().get();
  NodePtr kn = k.node().get();
  NodePtr vn = v.node().get();
  return record(
      {nq, dv}, std::move(out), {q, k, v},
      [=, probs = std::move(probs)](std::span<const double>, std::span<const double> g,
                                    std::span<std::span<double>> gi) {
        std::vector<double> ds(nk);
        for (std::size_t h = 0; h < heads; ++h) {
          const double* p = probs.data() + h * nq * nk;
          for (std::size_t i = 0; i < nq; ++i) {
            const double* pi = p + i * nk;
            const double* gO = g.data() + i * dv + h * dvh;
            // dP_ij = dO_i · v_j ; dV_j += P_ij dO_i
            double rowdot = 0.0;
            for (std::size_t j = 0; j < nk; ++j) {
              double dp = 0.0;
              for (std::size_t c = 0; c < dvh; ++c) dp += gO[c] * vn->value[j * dv + h * dvh + c];
              ds[j] = dp;
              rowdot += dp * pi[j];
              if (!gi[2].empty()) {
                for (std::size_t c = 0; c < dvh; ++c) gi[2][j * dv + h * dvh + c] += pi[j] * gO[c];
              }
            }
            for (std::size_t j = 0; j < nk; ++j) ds[j] = pi[j] * (ds[j] - rowdot) * inv;
            for (std::size_t j = 0; j < nk; ++j) {
              const double s = ds[j];
              if (s == 0.0) continue;
              if (!gi[0].empty()) {
                for (std::size_t c = 0; c < dh; ++c) gi[0][i * d + h * dh + c] += s * kn->value[j * d + h * dh + c];
              }
              if (!gi[1].empty()) {
                for (std::size_t c = 0; c < dh; ++c) gi[1][j * d + h * dh + c] += s * qn->value[i * d + h * dh + c];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------- parameters

std::size_t ParameterSet::add(std::string name, Shape shape) {
  for (const auto& p : params_) {
    if (p.name == name) throw Error("duplicate parameter name '" + name + "'");
  }
  params_.push_back({std::move(name), Tensor::variable(shape, std::vector<double>(shape[0] * shape[1], 0.0)), {}, {}});
  return params_.size() - 1;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

std::vector<std::vector<double>> ParameterSet::gradients() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) {
    const auto g = p.value.grad();
    if (g.empty()) out.emplace_back(p.value.numel(), 0.0);
    else out.emplace_back(g.begin(), g.end());
  }
  return out;
}

ParameterSet ParameterSet::clone() const {
  ParameterSet copy;
  for (const auto& p : params_) {
    copy.params_.push_back(
        {p.name, Tensor::variable(p.value.shape(), std::vector<double>(p.value.values().begin(), p.value.values().end())),
         p.m, p.v});
  }
  return copy;
}

void adamw_step(ParameterSet& params, std::span<const std::vector<double>> grads, const AdamWConfig& config,
                long step) {
  if (step < 1) throw std::invalid_argument("adamw_step: step must be >= 1");
  if (!(config.lr >= 0.0)) throw std::invalid_argument("adamw_step: lr must be >= 0");
  if (grads.size() != params.size()) throw ShapeError("adamw_step: gradient count does not match parameters");
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  const double decay = 1.0 - config.lr * config.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    const auto& g = grads[k];
    if (g.size() != p.value.numel()) throw ShapeError("adamw_step: gradient shape mismatch for '" + p.name + "'");
    if (p.m.size() != g.size()) p.m.assign(g.size(), 0.0);
    if (p.v.size() != g.size()) p.v.assign(g.size(), 0.0);
    auto theta = p.value.mutable_values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      theta[i] *= decay;
      p.m[i] = config.beta1 * p.m[i] + (1.0 - config.beta1) * g[i];
      p.v[i] = config.beta2 * p.v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = p.m[i] / bc1;
      const double vhat = p.v[i] / bc2;
      theta[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace tge::ad
