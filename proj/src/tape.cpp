#include "capl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "capl/util.hpp"

namespace capl {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

const Tensor& TValue::value() const { return tape->value(*this); }

void Tape::check_owned(TValue v, const char* op) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw std::logic_error(std::string(op) + ": value does not belong to this tape");
  }
}

bool Tape::wants_grad(TValue v) const { return grad_enabled_ && nodes_[v.id].requires_grad; }

TValue Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  if (n.requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

const Tensor& Tape::value(TValue v) const {
  check_owned(v, "value");
  return nodes_[v.id].value;
}

const Tensor& Tape::grad(TValue v) const {
  check_owned(v, "grad");
  static const Tensor empty;
  return nodes_[v.id].grad.numel() ? nodes_[v.id].grad : empty;
}

TValue Tape::leaf(Tensor v, bool requires_grad) {
  return push(std::move(v), requires_grad, nullptr);
}

void Tape::backward(TValue loss) {
  check_owned(loss, "backward");
  if (!grad_enabled_) throw std::logic_error("backward: tape has gradients disabled");
  if (ran_backward_) throw std::logic_error("backward: tape already replayed");
  const Node& l = nodes_[loss.id];
  if (!l.value.is_scalar()) {
    throw std::invalid_argument("backward: seed must be a scalar, got " + l.value.shape_str());
  }
  ran_backward_ = true;
  grad_buffer(loss.id).data[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backprop && n.grad.numel()) n.backprop(*this);
  }
}

TValue Tape::matmul(TValue a, TValue b) {
  check_owned(a, "matmul");
  check_owned(b, "matmul");
  Tensor out = matmul_plain(nodes_[a.id].value, nodes_[b.id].value);
  const bool req = wants_grad(a) || wants_grad(b);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [a, b, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    if (t.wants_grad(a)) {
      // dA += dC * B^T
      const Tensor& bv = t.nodes_[b.id].value;
      Tensor& ga = t.grad_buffer(a.id);
      const std::size_t m = g.rows(), n = g.cols(), k = bv.rows();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g.row_ptr(i);
          const double* brow = bv.row_ptr(p);
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga.at(i, p) += acc;
        }
      }
    }
    if (t.wants_grad(b)) {
      // dB += A^T * dC
      const Tensor& av = t.nodes_[a.id].value;
      Tensor& gb = t.grad_buffer(b.id);
      const std::size_t m = av.rows(), k = av.cols(), n = g.cols();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av.row_ptr(i);
        const double* grow = g.row_ptr(i);
        for (std::size_t p = 0; p < k; ++p) {
          const double av_ip = arow[p];
          if (av_ip == 0.0) continue;
          double* gbrow = gb.row_ptr(p);
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av_ip * grow[j];
        }
      }
    }
  });
}

TValue Tape::transpose(TValue a) {
  check_owned(a, "transpose");
  Tensor out = transpose_plain(nodes_[a.id].value);
  const bool req = wants_grad(a);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [a, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    Tensor& ga = t.grad_buffer(a.id);
    const std::size_t m = g.rows(), n = g.cols();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga.at(j, i) += g.at(i, j);
    }
  });
}

TValue Tape::add(TValue a, TValue b) {
  check_owned(a, "add");
  check_owned(b, "add");
  const Tensor& av = nodes_[a.id].value;
  const Tensor& bv = nodes_[b.id].value;
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
  const bool req = wants_grad(a) || wants_grad(b);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [a, b, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    if (t.wants_grad(a)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    }
    if (t.wants_grad(b)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i];
    }
  });
}

TValue Tape::sub(TValue a, TValue b) {
  check_owned(a, "sub");
  check_owned(b, "sub");
  const Tensor& av = nodes_[a.id].value;
  const Tensor& bv = nodes_[b.id].value;
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("sub: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= bv.data[i];
  const bool req = wants_grad(a) || wants_grad(b);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [a, b, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    if (t.wants_grad(a)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    }
    if (t.wants_grad(b)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
    }
  });
}

TValue Tape::hadamard(TValue a, TValue b) {
  check_owned(a, "hadamard");
  check_owned(b, "hadamard");
  const Tensor& av = nodes_[a.id].value;
  const Tensor& bv = nodes_[b.id].value;
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("hadamard: shape mismatch " + av.shape_str() + " vs " +
                                bv.shape_str());
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
  const bool req = wants_grad(a) || wants_grad(b);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [a, b, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    if (t.wants_grad(a)) {
      const Tensor& bval = t.nodes_[b.id].value;
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * bval.data[i];
    }
    if (t.wants_grad(b)) {
      const Tensor& aval = t.nodes_[a.id].value;
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * aval.data[i];
    }
  });
}

TValue Tape::scale(TValue a, double c) {
  check_owned(a, "scale");
  Tensor out = nodes_[a.id].value;
  for (double& v : out.data) v *= c;
  const bool req = wants_grad(a);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [a, c, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += c * g.data[i];
  });
}

TValue Tape::add_row_vector(TValue m, TValue row) {
  check_owned(m, "add_row_vector");
  check_owned(row, "add_row_vector");
  const Tensor& mv = nodes_[m.id].value;
  const Tensor& rv = nodes_[row.id].value;
  if (mv.ndim() != 2 || rv.numel() != mv.cols()) {
    throw std::invalid_argument("add_row_vector: shapes " + mv.shape_str() + " and " +
                                rv.shape_str() + " incompatible");
  }
  Tensor out = mv;
  const std::size_t r = mv.rows(), c = mv.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double* orow = out.row_ptr(i);
    for (std::size_t j = 0; j < c; ++j) orow[j] += rv.data[j];
  }
  const bool req = wants_grad(m) || wants_grad(row);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [m, row, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    const std::size_t r = g.rows(), c = g.cols();
    if (t.wants_grad(m)) {
      Tensor& gm = t.grad_buffer(m.id);
      for (std::size_t i = 0; i < g.numel(); ++i) gm.data[i] += g.data[i];
    }
    if (t.wants_grad(row)) {
      Tensor& gr = t.grad_buffer(row.id);
      for (std::size_t i = 0; i < r; ++i) {
        const double* grow = g.row_ptr(i);
        for (std::size_t j = 0; j < c; ++j) gr.data[j] += grow[j];
      }
    }
  });
}

TValue Tape::row_concat(const std::vector<TValue>& parts) {
  if (parts.empty()) throw std::invalid_argument("row_concat: no parts");
  std::size_t rows = 0;
  const std::size_t cols = nodes_[parts[0].id].value.cols();
  bool req = false;
  for (TValue p : parts) {
    check_owned(p, "row_concat");
    const Tensor& v = nodes_[p.id].value;
    if (v.ndim() != 2 || v.cols() != cols) {
      throw std::invalid_argument("row_concat: column counts differ");
    }
    rows += v.rows();
    req = req || wants_grad(p);
  }
  Tensor out({rows, cols});
  std::size_t r0 = 0;
  for (TValue p : parts) {
    const Tensor& v = nodes_[p.id].value;
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + r0 * cols);
    r0 += v.rows();
  }
  std::size_t oid = nodes_.size();
  std::vector<TValue> parts_copy = parts;
  return push(std::move(out), req, [parts_copy, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    const std::size_t cols = g.cols();
    std::size_t r0 = 0;
    for (TValue p : parts_copy) {
      const std::size_t pr = t.nodes_[p.id].value.rows();
      if (t.wants_grad(p)) {
        Tensor& gp = t.grad_buffer(p.id);
        for (std::size_t i = 0; i < pr * cols; ++i) gp.data[i] += g.data[r0 * cols + i];
      }
      r0 += pr;
    }
  });
}

TValue Tape::row_select(TValue a, std::vector<std::size_t> rows) {
  check_owned(a, "row_select");
  const Tensor& av = nodes_[a.id].value;
  if (av.ndim() != 2) throw std::invalid_argument("row_select: expects a matrix");
  const std::size_t c = av.cols();
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw std::out_of_range("row_select: row out of range");
    std::copy(av.row_ptr(rows[i]), av.row_ptr(rows[i]) + c, out.row_ptr(i));
  }
  const bool req = wants_grad(a);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [a, rows = std::move(rows), oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    Tensor& ga = t.grad_buffer(a.id);
    const std::size_t c = g.cols();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double* grow = ga.row_ptr(rows[i]);
      const double* srow = g.row_ptr(i);
      for (std::size_t j = 0; j < c; ++j) grow[j] += srow[j];
    }
  });
}

TValue Tape::col_slice(TValue a, std::size_t offset, std::size_t len) {
  check_owned(a, "col_slice");
  const Tensor& av = nodes_[a.id].value;
  if (av.ndim() != 2 || offset + len > av.cols()) {
    throw std::invalid_argument("col_slice: slice out of range");
  }
  const std::size_t r = av.rows();
  Tensor out({r, len});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(av.row_ptr(i) + offset, av.row_ptr(i) + offset + len, out.row_ptr(i));
  }
  const bool req = wants_grad(a);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [a, offset, len, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    Tensor& ga = t.grad_buffer(a.id);
    const std::size_t r = g.rows();
    for (std::size_t i = 0; i < r; ++i) {
      double* grow = ga.row_ptr(i) + offset;
      const double* srow = g.row_ptr(i);
      for (std::size_t j = 0; j < len; ++j) grow[j] += srow[j];
    }
  });
}

TValue Tape::col_concat(const std::vector<TValue>& parts) {
  if (parts.empty()) throw std::invalid_argument("col_concat: no parts");
  const std::size_t rows = nodes_[parts[0].id].value.rows();
  std::size_t cols = 0;
  bool req = false;
  for (TValue p : parts) {
    check_owned(p, "col_concat");
    const Tensor& v = nodes_[p.id].value;
    if (v.ndim() != 2 || v.rows() != rows) {
      throw std::invalid_argument("col_concat: row counts differ");
    }
    cols += v.cols();
    req = req || wants_grad(p);
  }
  Tensor out({rows, cols});
  std::size_t c0 = 0;
  for (TValue p : parts) {
    const Tensor& v = nodes_[p.id].value;
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(v.row_ptr(i), v.row_ptr(i) + v.cols(), out.row_ptr(i) + c0);
    }
    c0 += v.cols();
  }
  std::size_t oid = nodes_.size();
  std::vector<TValue> parts_copy = parts;
  return push(std::move(out), req, [parts_copy, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    const std::size_t rows = g.rows();
    std::size_t c0 = 0;
    for (TValue p : parts_copy) {
      const std::size_t pc = t.nodes_[p.id].value.cols();
      if (t.wants_grad(p)) {
        Tensor& gp = t.grad_buffer(p.id);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* srow = g.row_ptr(i) + c0;
          double* drow = gp.row_ptr(i);
          for (std::size_t j = 0; j < pc; ++j) drow[j] += srow[j];
        }
      }
      c0 += pc;
    }
  });
}

TValue Tape::embedding_lookup(TValue table, std::vector<std::size_t> ids) {
  check_owned(table, "embedding_lookup");
  const Tensor& tv = nodes_[table.id].value;
  if (tv.ndim() != 2) throw std::invalid_argument("embedding_lookup: table must be a matrix");
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(tv.rows()) + " rows");
    }
    std::copy(tv.row_ptr(ids[i]), tv.row_ptr(ids[i]) + d, out.row_ptr(i));
  }
  const bool req = wants_grad(table);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [table, ids = std::move(ids), oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    Tensor& gt = t.grad_buffer(table.id);
    const std::size_t d = g.cols();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double* drow = gt.row_ptr(ids[i]);
      const double* srow = g.row_ptr(i);
      for (std::size_t j = 0; j < d; ++j) drow[j] += srow[j];
    }
  });
}

TValue Tape::layer_norm(TValue x, TValue gamma, TValue beta) {
  check_owned(x, "layer_norm");
  check_owned(gamma, "layer_norm");
  check_owned(beta, "layer_norm");
  const Tensor& xv = nodes_[x.id].value;
  const Tensor& gv = nodes_[gamma.id].value;
  const Tensor& bv = nodes_[beta.id].value;
  if (xv.ndim() != 2 || gv.numel() != xv.cols() || bv.numel() != xv.cols()) {
    throw std::invalid_argument("layer_norm: parameter shapes incompatible with " + xv.shape_str());
  }
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out({r, c});
  Tensor xhat({r, c});
  Tensor inv_std({r});
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = xv.row_ptr(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std.data[i] = inv;
    double* hr = xhat.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t j = 0; j < c; ++j) {
      hr[j] = (xr[j] - mean) * inv;
      orow[j] = gv.data[j] * hr[j] + bv.data[j];
    }
  }
  const bool req = wants_grad(x) || wants_grad(gamma) || wants_grad(beta);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req,
              [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), oid](Tape& t) {
                const Tensor& g = t.nodes_[oid].grad;
                const Tensor& gv = t.nodes_[gamma.id].value;
                const std::size_t r = g.rows(), c = g.cols();
                if (t.wants_grad(gamma)) {
                  Tensor& gg = t.grad_buffer(gamma.id);
                  for (std::size_t i = 0; i < r; ++i) {
                    const double* grow = g.row_ptr(i);
                    const double* hr = xhat.row_ptr(i);
                    for (std::size_t j = 0; j < c; ++j) gg.data[j] += grow[j] * hr[j];
                  }
                }
                if (t.wants_grad(beta)) {
                  Tensor& gb = t.grad_buffer(beta.id);
                  for (std::size_t i = 0; i < r; ++i) {
                    const double* grow = g.row_ptr(i);
                    for (std::size_t j = 0; j < c; ++j) gb.data[j] += grow[j];
                  }
                }
                if (t.wants_grad(x)) {
                  Tensor& gx = t.grad_buffer(x.id);
                  const double n = static_cast<double>(c);
                  for (std::size_t i = 0; i < r; ++i) {
                    const double* grow = g.row_ptr(i);
                    const double* hr = xhat.row_ptr(i);
                    double mean_d = 0.0, mean_dh = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                      const double dj = grow[j] * gv.data[j];
                      mean_d += dj;
                      mean_dh += dj * hr[j];
                    }
                    mean_d /= n;
                    mean_dh /= n;
                    double* gxr = gx.row_ptr(i);
                    for (std::size_t j = 0; j < c; ++j) {
                      const double dj = grow[j] * gv.data[j];
                      gxr[j] += (dj - mean_d - hr[j] * mean_dh) * inv_std.data[i];
                    }
                  }
                }
              });
}

TValue Tape::gelu(TValue x) {
  check_owned(x, "gelu");
  const Tensor& xv = nodes_[x.id].value;
  Tensor out = xv;
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  const bool req = wants_grad(x);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [x, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    const Tensor& xval = t.nodes_[x.id].value;
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = xval.data[i];
      const double phi_big = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double phi_small = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx.data[i] += g.data[i] * (phi_big + v * phi_small);
    }
  });
}

TValue Tape::masked_row_softmax(TValue logits, const AttentionMask& mask) {
  check_owned(logits, "masked_row_softmax");
  const Tensor& lv = nodes_[logits.id].value;
  if (lv.ndim() != 2 || lv.rows() != mask.size || lv.cols() != mask.size) {
    throw std::invalid_argument("masked_row_softmax: logits " + lv.shape_str() +
                                " incompatible with mask of size " + std::to_string(mask.size));
  }
  const std::size_t t = mask.size;
  Tensor out({t, t});
  for (std::size_t i = 0; i < t; ++i) {
    const double* lr = lv.row_ptr(i);
    double* orow = out.row_ptr(i);
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < t; ++j) {
      const double v = lr[j] + (mask.at(i, j) ? 0.0 : kMaskSentinel);
      if (v > mx) mx = v;
      any = any || mask.at(i, j);
    }
    if (!any) throw std::logic_error("masked_row_softmax: fully masked row (unreachable)");
    double sum = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      const double v = lr[j] + (mask.at(i, j) ? 0.0 : kMaskSentinel);
      const double e = std::exp(v - mx);
      orow[j] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < t; ++j) {
      orow[j] = mask.at(i, j) ? orow[j] * inv : 0.0;  // hard zero at masked positions
    }
  }
  const bool req = wants_grad(logits);
  std::size_t oid = nodes_.size();
  // The visibility pattern is captured by value; masks are small at this scale.
  std::vector<std::uint8_t> vis = mask.visible;
  return push(std::move(out), req, [logits, vis = std::move(vis), oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    const Tensor& y = t.nodes_[oid].value;
    Tensor& gl = t.grad_buffer(logits.id);
    const std::size_t n = g.rows();
    for (std::size_t i = 0; i < n; ++i) {
      const double* yr = y.row_ptr(i);
      const double* gr = g.row_ptr(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      double* glr = gl.row_ptr(i);
      const std::uint8_t* vr = vis.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        if (vr[j]) glr[j] += yr[j] * (gr[j] - dot);
      }
    }
  });
}

TValue Tape::log_softmax_rows(TValue x) {
  check_owned(x, "log_softmax_rows");
  const Tensor& xv = nodes_[x.id].value;
  if (xv.ndim() != 2) throw std::invalid_argument("log_softmax_rows: expects a matrix");
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = xv.row_ptr(i);
    double mx = xr[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(xr[j] - mx);
    const double lse = mx + std::log(sum);
    double* orow = out.row_ptr(i);
    for (std::size_t j = 0; j < c; ++j) orow[j] = xr[j] - lse;
  }
  const bool req = wants_grad(x);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [x, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    const Tensor& y = t.nodes_[oid].value;
    Tensor& gx = t.grad_buffer(x.id);
    const std::size_t r = g.rows(), c = g.cols();
    for (std::size_t i = 0; i < r; ++i) {
      const double* gr = g.row_ptr(i);
      const double* yr = y.row_ptr(i);
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += gr[j];
      double* gxr = gx.row_ptr(i);
      for (std::size_t j = 0; j < c; ++j) gxr[j] += gr[j] - std::exp(yr[j]) * gsum;
    }
  });
}

TValue Tape::select_scalar(TValue x, std::size_t r, std::size_t c) {
  check_owned(x, "select_scalar");
  const Tensor& xv = nodes_[x.id].value;
  if (xv.ndim() != 2 || r >= xv.rows() || c >= xv.cols()) {
    throw std::out_of_range("select_scalar: index out of range");
  }
  Tensor out = Tensor::scalar(xv.at(r, c));
  const bool req = wants_grad(x);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [x, r, c, oid](Tape& t) {
    const double g = t.nodes_[oid].grad.data[0];
    t.grad_buffer(x.id).at(r, c) += g;
  });
}

TValue Tape::sum_all(TValue x) {
  check_owned(x, "sum_all");
  const Tensor& xv = nodes_[x.id].value;
  double s = 0.0;
  for (double v : xv.data) s += v;
  const bool req = wants_grad(x);
  std::size_t oid = nodes_.size();
  return push(Tensor::scalar(s), req, [x, oid](Tape& t) {
    const double g = t.nodes_[oid].grad.data[0];
    Tensor& gx = t.grad_buffer(x.id);
    for (double& v : gx.data) v += g;
  });
}

TValue Tape::sum(const std::vector<TValue>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum: no terms");
  TValue acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

TValue Tape::logsigmoid(TValue x) {
  check_owned(x, "logsigmoid");
  Tensor out = nodes_[x.id].value;
  for (double& v : out.data) v = stable_log_sigmoid(v);
  const bool req = wants_grad(x);
  std::size_t oid = nodes_.size();
  return push(std::move(out), req, [x, oid](Tape& t) {
    const Tensor& g = t.nodes_[oid].grad;
    const Tensor& xval = t.nodes_[x.id].value;
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      gx.data[i] += g.data[i] * stable_sigmoid(-xval.data[i]);
    }
  });
}

}  // namespace capl
