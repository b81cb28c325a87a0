#include "capl/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace capl {

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t mask_size) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) {
    throw std::invalid_argument("attention: Q, K, V must be matrices");
  }
  if (!q.same_shape(k) || q.rows() != v.rows()) {
    throw std::invalid_argument("attention: inconsistent Q/K/V shapes " + q.shape_str() + ", " +
                                k.shape_str() + ", " + v.shape_str());
  }
  if (q.rows() != mask_size) {
    throw std::invalid_argument("attention: mask size " + std::to_string(mask_size) +
                                " does not match sequence length " + std::to_string(q.rows()));
  }
}

TValue scaled_scores(Tape& tape, TValue q, TValue k) {
  const double d = static_cast<double>(q.value().cols());
  TValue logits = tape.matmul(q, tape.transpose(k));
  return tape.scale(logits, 1.0 / std::sqrt(d));
}

}  // namespace

const AttentionMask& LayerMasks::require(MaskKind kind) const {
  const AttentionMask* m = nullptr;
  switch (kind) {
    case MaskKind::Causal: m = causal; break;
    case MaskKind::CrossSelective: m = selective; break;
    case MaskKind::Truncated: m = truncated; break;
    case MaskKind::FusedCausalSelective: m = nullptr; break;
  }
  if (!m) throw std::logic_error("LayerMasks: mask not prepared for requested kind");
  return *m;
}

TapedAttentionOutput masked_attention(Tape& tape, TValue q, TValue k, TValue v,
                                      const AttentionMask& mask) {
  check_qkv(q.value(), k.value(), v.value(), mask.size);
  TValue weights = tape.masked_row_softmax(scaled_scores(tape, q, k), mask);
  TValue values = tape.matmul(weights, v);
  return {values, weights};
}

TapedAttentionOutput fused_attention(Tape& tape, TValue q, TValue k, TValue v,
                                     const AttentionMask& causal,
                                     const AttentionMask& selective) {
  check_qkv(q.value(), k.value(), v.value(), causal.size);
  if (causal.size != selective.size) {
    throw std::invalid_argument("fused_attention: mask sizes differ");
  }
  TValue scores = scaled_scores(tape, q, k);
  TValue a_causal = tape.masked_row_softmax(scores, causal);
  TValue a_selective = tape.masked_row_softmax(scores, selective);
  TValue weights = tape.scale(tape.add(a_causal, a_selective), 0.5);
  TValue values = tape.matmul(weights, v);
  return {values, weights};
}

AttentionOutput masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                 const AttentionMask& mask) {
  Tape tape(false);
  auto out = masked_attention(tape, tape.constant(q), tape.constant(k), tape.constant(v), mask);
  return {out.values.value(), out.weights.value()};
}

AttentionOutput fused_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                const AttentionMask& causal, const AttentionMask& selective) {
  Tape tape(false);
  auto out = fused_attention(tape, tape.constant(q), tape.constant(k), tape.constant(v), causal,
                             selective);
  return {out.values.value(), out.weights.value()};
}

TValue multi_head_attention(Tape& tape, TValue x, const MultiHeadNodes& p, int heads,
                            MaskKind kind, const LayerMasks& masks) {
  const Tensor& xv = x.value();
  if (heads < 1) throw std::invalid_argument("multi_head_attention: heads must be >= 1");
  const std::size_t d_model = xv.cols();
  if (d_model % static_cast<std::size_t>(heads) != 0) {
    throw std::invalid_argument("multi_head_attention: d_model " + std::to_string(d_model) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t d_head = d_model / static_cast<std::size_t>(heads);

  TValue q = tape.add_row_vector(tape.matmul(x, p.wq), p.bq);
  TValue k = tape.add_row_vector(tape.matmul(x, p.wk), p.bk);
  TValue v = tape.add_row_vector(tape.matmul(x, p.wv), p.bv);

  std::vector<TValue> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * d_head;
    TValue qh = tape.col_slice(q, off, d_head);
    TValue kh = tape.col_slice(k, off, d_head);
    TValue vh = tape.col_slice(v, off, d_head);
    TapedAttentionOutput out;
    if (kind == MaskKind::FusedCausalSelective) {
      if (!masks.causal || !masks.selective) {
        throw std::logic_error("LayerMasks: fused attention needs causal and selective masks");
      }
      out = fused_attention(tape, qh, kh, vh, *masks.causal, *masks.selective);
    } else {
      out = masked_attention(tape, qh, kh, vh, masks.require(kind));
    }
    head_outputs.push_back(out.values);
  }
  TValue concat = heads == 1 ? head_outputs[0] : tape.col_concat(head_outputs);
  return tape.add_row_vector(tape.matmul(concat, p.wo), p.bo);
}

Tensor multi_head_attention(const Tensor& x, const MultiHeadParams& p, int heads, MaskKind kind,
                            const LayerMasks& masks) {
  Tape tape(false);
  MultiHeadNodes nodes{tape.constant(p.wq), tape.constant(p.bq), tape.constant(p.wk),
                       tape.constant(p.bk), tape.constant(p.wv), tape.constant(p.bv),
                       tape.constant(p.wo), tape.constant(p.bo)};
  return multi_head_attention(tape, tape.constant(x), nodes, heads, kind, masks).value();
}

}  // namespace capl
