#include "unimixer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "unimixer/errors.hpp"

namespace unimixer::ad {

namespace {

Var make_node(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v->requires_grad; });
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(fn);
  }
  return node;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

// Accumulates a * b (a: n x k, b: k x m) into out, which must be n x m.
void gemm_acc(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* out_row = out + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* b_row = b + p * m;
      for (std::size_t j = 0; j < m; ++j) out_row[j] += aip * b_row[j];
    }
  }
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad.data()[i] += g.data()[i];
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

void backward(const Var& root) {
  if (root->value.rows() != 1 || root->value.cols() != 1) {
    throw DimensionError("backward: root must be 1x1, got " + root->value.shape_string());
  }
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->accumulate(Matrix(1, 1, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

Var matmul(const Var& a, const Var& b) {
  Matrix out = unimixer::matmul(a->value, b->value);
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Var& a = self.inputs[0];
    const Var& b = self.inputs[1];
    const std::size_t n = a->value.rows(), k = a->value.cols(), m = b->value.cols();
    if (a->requires_grad) {
      Matrix ga(n, k);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += self.grad(i, j) * b->value(p, j);
          ga(i, p) = acc;
        }
      a->accumulate(ga);
    }
    if (b->requires_grad) {
      Matrix gb(k, m);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = a->value(i, p);
          for (std::size_t j = 0; j < m; ++j) gb(p, j) += aip * self.grad(i, j);
        }
      b->accumulate(gb);
    }
  });
}

Var transpose(const Var& a) {
  return make_node(unimixer::transpose(a->value), {a},
                   [](Node& self) { self.inputs[0]->accumulate(unimixer::transpose(self.grad)); });
}

Var add(const Var& a, const Var& b) {
  return make_node(unimixer::add(a->value, b->value), {a, b}, [](Node& self) {
    for (const Var& in : self.inputs)
      if (in->requires_grad) in->accumulate(self.grad);
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row->value.rows() == 1 && row->value.cols() == a->value.cols(),
          "add_row: row " + row->value.shape_string() + " does not broadcast over " + a->value.shape_string());
  Matrix out = a->value;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += row->value(0, j);
  return make_node(std::move(out), {a, row}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) {
      Matrix g(1, self.grad.cols());
      for (std::size_t i = 0; i < self.grad.rows(); ++i)
        for (std::size_t j = 0; j < self.grad.cols(); ++j) g(0, j) += self.grad(i, j);
      self.inputs[1]->accumulate(g);
    }
  });
}

Var hadamard(const Var& a, const Var& b) {
  Matrix out = unimixer::hadamard(a->value, b->value);
  MultiplyCounter::record(out.size());
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Var& a = self.inputs[0];
    const Var& b = self.inputs[1];
    if (a->requires_grad) a->accumulate(unimixer::hadamard(self.grad, b->value));
    if (b->requires_grad) b->accumulate(unimixer::hadamard(self.grad, a->value));
  });
}

Var scale(const Var& a, double factor) {
  Matrix out = unimixer::scale(a->value, factor);
  MultiplyCounter::record(out.size());
  return make_node(std::move(out), {a},
                   [factor](Node& self) { self.inputs[0]->accumulate(unimixer::scale(self.grad, factor)); });
}

Var swish(const Var& a) {
  Matrix out = a->value;
  for (double& v : out.data()) v = unimixer::swish(v);
  MultiplyCounter::record(out.size());
  return make_node(std::move(out), {a}, [](Node& self) {
    const Matrix& x = self.inputs[0]->value;
    Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = sigmoid(x.data()[i]);
      g.data()[i] = self.grad.data()[i] * (s + x.data()[i] * s * (1.0 - s));
    }
    self.inputs[0]->accumulate(g);
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  require(a->value.size() == rows * cols, "reshape: " + a->value.shape_string() + " cannot become " +
                                              std::to_string(rows) + "x" + std::to_string(cols));
  return make_node(Matrix(rows, cols, a->value.data()), {a}, [](Node& self) {
    const Matrix& in = self.inputs[0]->value;
    self.inputs[0]->accumulate(Matrix(in.rows(), in.cols(), self.grad.data()));
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t width) {
  const Matrix& x = a->value;
  require(start + width <= x.cols(), "slice_cols: columns [" + std::to_string(start) + ", " +
                                         std::to_string(start + width) + ") out of range for " + x.shape_string());
  Matrix out(x.rows(), width);
  for (std::size_t i = 0; i < x.rows(); ++i)
    std::copy_n(x.row(i).begin() + static_cast<std::ptrdiff_t>(start), width, out.row(i).begin());
  return make_node(std::move(out), {a}, [start, width](Node& self) {
    const Matrix& x = self.inputs[0]->value;
    Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      std::copy_n(self.grad.row(i).begin(), width, g.row(i).begin() + static_cast<std::ptrdiff_t>(start));
    self.inputs[0]->accumulate(g);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts.front()->value.rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require(p->value.rows() == rows, "concat_cols: row count mismatch");
    cols += p->value.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(p->value.row(i).begin(), p->value.row(i).end(),
                out.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p->value.cols();
  }
  return make_node(std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (const Var& p : self.inputs) {
      const std::size_t w = p->value.cols();
      if (p->requires_grad) {
        Matrix g(p->value.rows(), w);
        for (std::size_t i = 0; i < g.rows(); ++i)
          std::copy_n(self.grad.row(i).begin() + static_cast<std::ptrdiff_t>(offset), w, g.row(i).begin());
        p->accumulate(g);
      }
      offset += w;
    }
  });
}

Var rms_norm_rows(const Var& a, double eps) {
  const Matrix& x = a->value;
  require(x.cols() > 0, "rms_norm_rows: empty rows");
  Matrix out(x.rows(), x.cols());
  std::vector<double> inv(x.rows());
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sq = 0.0;
    for (double v : x.row(i)) sq += v * v;
    inv[i] = 1.0 / std::sqrt(sq / n + eps);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) * inv[i];
  }
  MultiplyCounter::record(2 * x.size());
  return make_node(std::move(out), {a}, [inv = std::move(inv), n](Node& self) {
    const Matrix& x = self.inputs[0]->value;
    Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) dot += self.grad(i, j) * x(i, j);
      const double c = inv[i] * inv[i] * inv[i] * dot / n;
      for (std::size_t j = 0; j < x.cols(); ++j) g(i, j) = inv[i] * self.grad(i, j) - c * x(i, j);
    }
    self.inputs[0]->accumulate(g);
  });
}

namespace {

Var exp_scaled(const Var& w, double tau) {
  Matrix out = w->value;
  for (double& v : out.data()) v = std::exp(v / tau);
  return make_node(std::move(out), {w}, [tau](Node& self) {
    Matrix g = unimixer::hadamard(self.grad, self.value);
    self.inputs[0]->accumulate(unimixer::scale(g, 1.0 / tau));
  });
}

// Divides every row (or column) by its sum.
Var normalize(const Var& a, bool rows) {
  const Matrix& x = a->value;
  const std::size_t groups = rows ? x.rows() : x.cols();
  std::vector<double> totals(groups, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) totals[rows ? i : j] += x(i, j);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / totals[rows ? i : j];
  return make_node(std::move(out), {a}, [totals = std::move(totals), rows](Node& self) {
    const Matrix& y = self.value;
    std::vector<double> dots(totals.size(), 0.0);
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) dots[rows ? i : j] += self.grad(i, j) * y(i, j);
    Matrix g(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) {
        const std::size_t k = rows ? i : j;
        g(i, j) = (self.grad(i, j) - dots[k]) / totals[k];
      }
    self.inputs[0]->accumulate(g);
  });
}

}  // namespace

Var symmetrize(const Var& a) {
  return make_node(unimixer::symmetrize(a->value), {a},
                   [](Node& self) { self.inputs[0]->accumulate(unimixer::symmetrize(self.grad)); });
}

Var sinkhorn(const Var& w, const ConstraintConfig& cfg) {
  cfg.validate();
  const Matrix& raw = w->value;
  require(raw.is_square() && !raw.empty(), "sinkhorn: matrix " + raw.shape_string() + " must be square");
  const double limit = max_abs(raw.data()) / cfg.tau;
  if (!(limit <= 700.0)) {
    throw RangeError("sinkhorn: max |w|/tau = " + std::to_string(limit) +
                     " overflows exp; rescale the weights or raise tau");
  }
  const bool symmetric_input = is_symmetric(raw);
  Var m = exp_scaled(w, cfg.tau);
  for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
    m = normalize(m, true);
    m = normalize(m, false);
  }
  return symmetric_input ? symmetrize(m) : m;
}

Var block_linear(const Var& x, const std::vector<Var>& weights) {
  require(!weights.empty(), "block_linear: no weights");
  const std::size_t in_dim = weights.front()->value.rows();
  const std::size_t out_dim = weights.front()->value.cols();
  for (const Var& w : weights) {
    require(w->value.rows() == in_dim && w->value.cols() == out_dim,
            "block_linear: ragged weight " + w->value.shape_string());
  }
  const std::size_t blocks = weights.size();
  const Matrix& xv = x->value;
  require(xv.cols() == blocks * in_dim, "block_linear: input " + xv.shape_string() + " does not split into " +
                                            std::to_string(blocks) + " blocks of " + std::to_string(in_dim));
  const std::size_t n = xv.rows();
  Matrix out(n, blocks * out_dim);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t b = 0; b < blocks; ++b) {
      const double* xin = xv.data().data() + s * xv.cols() + b * in_dim;
      double* yout = out.data().data() + s * out.cols() + b * out_dim;
      gemm_acc(xin, weights[b]->value.data().data(), yout, 1, in_dim, out_dim);
    }
  MultiplyCounter::record(static_cast<std::uint64_t>(n) * blocks * in_dim * out_dim);

  std::vector<Var> inputs{x};
  inputs.insert(inputs.end(), weights.begin(), weights.end());
  return make_node(std::move(out), std::move(inputs), [blocks, in_dim, out_dim](Node& self) {
    const Var& x = self.inputs[0];
    const Matrix& xv = x->value;
    const std::size_t n = xv.rows();
    if (x->requires_grad) {
      Matrix gx(n, xv.cols());
      for (std::size_t b = 0; b < blocks; ++b) {
        const Matrix& w = self.inputs[b + 1]->value;
        for (std::size_t s = 0; s < n; ++s) {
          const double* gy = self.grad.data().data() + s * self.grad.cols() + b * out_dim;
          double* gxi = gx.data().data() + s * gx.cols() + b * in_dim;
          for (std::size_t p = 0; p < in_dim; ++p) {
            const double* w_row = w.data().data() + p * out_dim;
            double acc = 0.0;
            for (std::size_t j = 0; j < out_dim; ++j) acc += gy[j] * w_row[j];
            gxi[p] = acc;
          }
        }
      }
      x->accumulate(gx);
    }
    for (std::size_t b = 0; b < blocks; ++b) {
      const Var& w = self.inputs[b + 1];
      if (!w->requires_grad) continue;
      Matrix gw(in_dim, out_dim);
      for (std::size_t s = 0; s < n; ++s) {
        const double* xin = xv.data().data() + s * xv.cols() + b * in_dim;
        const double* gy = self.grad.data().data() + s * self.grad.cols() + b * out_dim;
        for (std::size_t p = 0; p < in_dim; ++p) {
          const double xp = xin[p];
          double* gw_row = gw.data().data() + p * out_dim;
          for (std::size_t j = 0; j < out_dim; ++j) gw_row[j] += xp * gy[j];
        }
      }
      w->accumulate(gw);
    }
  });
}

Var block_global(const Var& g, const Var& h, std::size_t block) {
  const Matrix& gv = g->value;
  const Matrix& hv = h->value;
  const std::size_t blocks = gv.rows();
  require(gv.is_square() && block > 0 && hv.cols() == blocks * block,
          "block_global: global " + gv.shape_string() + " with block " + std::to_string(block) +
              " does not fit input " + hv.shape_string());
  const std::size_t n = hv.rows();
  Matrix out(n, hv.cols());
  for (std::size_t s = 0; s < n; ++s)
    gemm_acc(gv.data().data(), hv.data().data() + s * hv.cols(), out.data().data() + s * out.cols(), blocks, blocks,
             block);
  MultiplyCounter::record(static_cast<std::uint64_t>(n) * blocks * blocks * block);
  return make_node(std::move(out), {g, h}, [blocks, block](Node& self) {
    const Var& g = self.inputs[0];
    const Var& h = self.inputs[1];
    const std::size_t n = h->value.rows();
    const std::size_t width = h->value.cols();
    if (g->requires_grad) {
      Matrix gg(blocks, blocks);
      for (std::size_t s = 0; s < n; ++s) {
        const double* dy = self.grad.data().data() + s * width;
        const double* hs = h->value.data().data() + s * width;
        for (std::size_t i = 0; i < blocks; ++i)
          for (std::size_t j = 0; j < blocks; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < block; ++k) acc += dy[i * block + k] * hs[j * block + k];
            gg(i, j) += acc;
          }
      }
      g->accumulate(gg);
    }
    if (h->requires_grad) {
      const Matrix gt = unimixer::transpose(g->value);
      Matrix gh(n, width);
      for (std::size_t s = 0; s < n; ++s)
        gemm_acc(gt.data().data(), self.grad.data().data() + s * width, gh.data().data() + s * width, blocks, blocks,
                 block);
      h->accumulate(gh);
    }
  });
}

Var basis_combine(const Var& omega, std::size_t row, const std::vector<Var>& basis) {
  require(!basis.empty() && row < omega->value.rows() && omega->value.cols() == basis.size(),
          "basis_combine: omega " + omega->value.shape_string() + " does not index " +
              std::to_string(basis.size()) + " basis matrices");
  const Matrix& first = basis.front()->value;
  Matrix out(first.rows(), first.cols());
  for (std::size_t l = 0; l < basis.size(); ++l) {
    require(basis[l]->value.rows() == first.rows() && basis[l]->value.cols() == first.cols(),
            "basis_combine: ragged basis");
    const double c = omega->value(row, l);
    for (std::size_t e = 0; e < out.size(); ++e) out.data()[e] += c * basis[l]->value.data()[e];
  }
  std::vector<Var> inputs{omega};
  inputs.insert(inputs.end(), basis.begin(), basis.end());
  return make_node(std::move(out), std::move(inputs), [row](Node& self) {
    const Var& omega = self.inputs[0];
    const std::size_t count = self.inputs.size() - 1;
    if (omega->requires_grad) {
      Matrix go(omega->value.rows(), omega->value.cols());
      for (std::size_t l = 0; l < count; ++l) {
        double acc = 0.0;
        const Matrix& z = self.inputs[l + 1]->value;
        for (std::size_t e = 0; e < z.size(); ++e) acc += self.grad.data()[e] * z.data()[e];
        go(row, l) = acc;
      }
      omega->accumulate(go);
    }
    for (std::size_t l = 0; l < count; ++l) {
      const Var& z = self.inputs[l + 1];
      if (z->requires_grad) z->accumulate(unimixer::scale(self.grad, omega->value(row, l)));
    }
  });
}

Var gather_rows(const Var& table, std::span<const std::size_t> indices) {
  const Matrix& t = table->value;
  Matrix out(indices.size(), t.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " out of range for table " +
                           t.shape_string());
    }
    std::copy(t.row(indices[i]).begin(), t.row(indices[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_node(std::move(out), {table}, [idx = std::move(idx)](Node& self) {
    const Matrix& t = self.inputs[0]->value;
    Matrix g(t.rows(), t.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) g(idx[i], j) += self.grad(i, j);
    self.inputs[0]->accumulate(g);
  });
}

Var token_attention(const Var& q, const Var& k, const Var& v, std::size_t tokens) {
  const Matrix& qv = q->value;
  require(tokens > 0 && qv.cols() % tokens == 0 && k->value.rows() == qv.rows() &&
              k->value.cols() == qv.cols() && v->value.rows() == qv.rows() && v->value.cols() == qv.cols(),
          "token_attention: Q/K/V shapes " + qv.shape_string() + ", " + k->value.shape_string() + ", " +
              v->value.shape_string() + " do not agree");
  const std::size_t n = qv.rows();
  const std::size_t d = qv.cols() / tokens;
  const double c = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix out(n, qv.cols());
  Matrix probs(n, tokens * tokens);  // saved softmax per sample
  for (std::size_t s = 0; s < n; ++s) {
    const double* qs = qv.data().data() + s * qv.cols();
    const double* ks = k->value.data().data() + s * qv.cols();
    const double* vs = v->value.data().data() + s * qv.cols();
    double* ps = probs.data().data() + s * tokens * tokens;
    for (std::size_t i = 0; i < tokens; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < tokens; ++j) {
        double acc = 0.0;
        for (std::size_t e = 0; e < d; ++e) acc += qs[i * d + e] * ks[j * d + e];
        ps[i * tokens + j] = acc * c;
        mx = std::max(mx, ps[i * tokens + j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < tokens; ++j) {
        ps[i * tokens + j] = std::exp(ps[i * tokens + j] - mx);
        total += ps[i * tokens + j];
      }
      for (std::size_t j = 0; j < tokens; ++j) ps[i * tokens + j] /= total;
    }
    gemm_acc(ps, vs, out.data().data() + s * out.cols(), tokens, tokens, d);
  }
  MultiplyCounter::record(static_cast<std::uint64_t>(n) * (2 * tokens * tokens * d + tokens * tokens));
  return make_node(std::move(out), {q, k, v}, [probs = std::move(probs), tokens, d, c](Node& self) {
    const Var& q = self.inputs[0];
    const Var& k = self.inputs[1];
    const Var& v = self.inputs[2];
    const std::size_t n = q->value.rows();
    const std::size_t width = q->value.cols();
    Matrix gq(n, width), gk(n, width), gv(n, width);
    std::vector<double> dp(tokens * tokens);
    for (std::size_t s = 0; s < n; ++s) {
      const double* ps = probs.data().data() + s * tokens * tokens;
      const double* dy = self.grad.data().data() + s * width;
      const double* qs = q->value.data().data() + s * width;
      const double* ks = k->value.data().data() + s * width;
      const double* vs = v->value.data().data() + s * width;
      double* gqs = gq.data().data() + s * width;
      double* gks = gk.data().data() + s * width;
      double* gvs = gv.data().data() + s * width;
      // dV = P^T dY ; dP = dY V^T
      for (std::size_t i = 0; i < tokens; ++i)
        for (std::size_t j = 0; j < tokens; ++j) {
          const double pij = ps[i * tokens + j];
          double acc = 0.0;
          for (std::size_t e = 0; e < d; ++e) {
            gvs[j * d + e] += pij * dy[i * d + e];
            acc += dy[i * d + e] * vs[j * d + e];
          }
          dp[i * tokens + j] = acc;
        }
      // dS = P * (dP - rowsum(dP * P)), scaled by c for the logits.
      for (std::size_t i = 0; i < tokens; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) dot += dp[i * tokens + j] * ps[i * tokens + j];
        for (std::size_t j = 0; j < tokens; ++j) {
          const double ds = ps[i * tokens + j] * (dp[i * tokens + j] - dot) * c;
          for (std::size_t e = 0; e < d; ++e) {
            gqs[i * d + e] += ds * ks[j * d + e];
            gks[j * d + e] += ds * qs[i * d + e];
          }
        }
      }
    }
    if (q->requires_grad) q->accumulate(gq);
    if (k->requires_grad) k->accumulate(gk);
    if (v->requires_grad) v->accumulate(gv);
  });
}

Var fm_core(const Var& x, const Var& y, std::size_t tokens) {
  const Matrix& xv = x->value;
  const Matrix& yv = y->value;
  require(tokens > 0 && xv.cols() % tokens == 0 && yv.rows() == tokens,
          "fm_core: input " + xv.shape_string() + " and Y " + yv.shape_string() + " do not agree on " +
              std::to_string(tokens) + " tokens");
  const std::size_t n = xv.rows();
  const std::size_t dim = xv.cols() / tokens;
  const std::size_t r = yv.cols();
  Matrix out(n, tokens * r);
  Matrix grams(n, tokens * tokens);
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = xv.data().data() + s * xv.cols();
    double* gs = grams.data().data() + s * tokens * tokens;
    for (std::size_t i = 0; i < tokens; ++i)
      for (std::size_t j = 0; j < tokens; ++j) {
        double acc = 0.0;
        for (std::size_t e = 0; e < dim; ++e) acc += xs[i * dim + e] * xs[j * dim + e];
        gs[i * tokens + j] = acc;
      }
    gemm_acc(gs, yv.data().data(), out.data().data() + s * out.cols(), tokens, tokens, r);
  }
  MultiplyCounter::record(static_cast<std::uint64_t>(n) * (tokens * tokens * dim + tokens * tokens * r));
  return make_node(std::move(out), {x, y}, [grams = std::move(grams), tokens, dim, r](Node& self) {
    const Var& x = self.inputs[0];
    const Var& y = self.inputs[1];
    const std::size_t n = x->value.rows();
    Matrix gx(n, x->value.cols());
    Matrix gy(tokens, r);
    std::vector<double> dgram(tokens * tokens);
    for (std::size_t s = 0; s < n; ++s) {
      const double* gs = grams.data().data() + s * tokens * tokens;
      const double* dy = self.grad.data().data() + s * tokens * r;
      const double* xs = x->value.data().data() + s * x->value.cols();
      // dY += Gram^T dOut ; dGram = dOut Y^T
      for (std::size_t i = 0; i < tokens; ++i)
        for (std::size_t j = 0; j < tokens; ++j) {
          const double gij = gs[i * tokens + j];
          double acc = 0.0;
          for (std::size_t e = 0; e < r; ++e) {
            gy(j, e) += gij * dy[i * r + e];
            acc += dy[i * r + e] * y->value(j, e);
          }
          dgram[i * tokens + j] = acc;
        }
      // dX = (dGram + dGram^T) X
      double* gxs = gx.data().data() + s * x->value.cols();
      for (std::size_t i = 0; i < tokens; ++i)
        for (std::size_t j = 0; j < tokens; ++j) {
          const double w = dgram[i * tokens + j] + dgram[j * tokens + i];
          for (std::size_t e = 0; e < dim; ++e) gxs[i * dim + e] += w * xs[j * dim + e];
        }
    }
    if (x->requires_grad) x->accumulate(gx);
    if (y->requires_grad) y->accumulate(gy);
  });
}

Var permute_cols(const Var& x, std::vector<std::size_t> perm) {
  const Matrix& xv = x->value;
  require(perm.size() == xv.cols(), "permute_cols: permutation of length " + std::to_string(perm.size()) +
                                        " for " + xv.shape_string());
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t s = 0; s < xv.rows(); ++s)
    for (std::size_t j = 0; j < perm.size(); ++j) out(s, perm[j]) = xv(s, j);
  return make_node(std::move(out), {x}, [perm = std::move(perm)](Node& self) {
    Matrix g(self.grad.rows(), self.grad.cols());
    for (std::size_t s = 0; s < g.rows(); ++s)
      for (std::size_t j = 0; j < perm.size(); ++j) g(s, j) = self.grad(s, perm[j]);
    self.inputs[0]->accumulate(g);
  });
}

Var bce_with_logits(const Var& logits, std::span<const double> labels) {
  const Matrix& z = logits->value;
  require(z.cols() == 1 && z.rows() == labels.size(),
          "bce_with_logits: " + z.shape_string() + " logits for " + std::to_string(labels.size()) + " labels");
  require(!labels.empty(), "bce_with_logits: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double zi = z(i, 0);
    total += std::max(zi, 0.0) - zi * labels[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  const double n = static_cast<double>(labels.size());
  std::vector<double> y(labels.begin(), labels.end());
  return make_node(Matrix(1, 1, total / n), {logits}, [y = std::move(y), n](Node& self) {
    const Matrix& z = self.inputs[0]->value;
    Matrix g(z.rows(), 1);
    for (std::size_t i = 0; i < y.size(); ++i) g(i, 0) = self.grad(0, 0) * (sigmoid(z(i, 0)) - y[i]) / n;
    self.inputs[0]->accumulate(g);
  });
}

}  // namespace unimixer::ad
