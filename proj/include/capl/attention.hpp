#pragma once

#include "capl/masks.hpp"
#include "capl/tape.hpp"
#include "capl/tensor.hpp"

namespace capl {

struct AttentionOutput {
  Tensor values;   // T x d
  Tensor weights;  // T x T, row-stochastic, zero at masked positions
};

struct TapedAttentionOutput {
  TValue values;
  TValue weights;
};

// softmax(Q K^T / sqrt(d) + M) V with d = per-call head dimension.
TapedAttentionOutput masked_attention(Tape& tape, TValue q, TValue k, TValue v,
                                      const AttentionMask& mask);

// Equal-weight combination: weights = (A_causal + A_selective) / 2, applied
// to V once. Algebraically equal to averaging the two attention outputs.
TapedAttentionOutput fused_attention(Tape& tape, TValue q, TValue k, TValue v,
                                     const AttentionMask& causal, const AttentionMask& selective);

// Untaped convenience wrappers around the same computation.
AttentionOutput masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                 const AttentionMask& mask);
AttentionOutput fused_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                const AttentionMask& causal, const AttentionMask& selective);

struct MultiHeadNodes {
  TValue wq, bq, wk, bk, wv, bv, wo, bo;
};

// Masks a layer might need; pointers owned by the caller. `selective` may be
// null when the kind never asks for it (likewise `truncated`).
struct LayerMasks {
  const AttentionMask* causal{nullptr};
  const AttentionMask* selective{nullptr};
  const AttentionMask* truncated{nullptr};

  const AttentionMask& require(MaskKind kind) const;
};

// Standard head split / per-head attention / concat / output projection.
TValue multi_head_attention(Tape& tape, TValue x, const MultiHeadNodes& p, int heads,
                            MaskKind kind, const LayerMasks& masks);

struct MultiHeadParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

Tensor multi_head_attention(const Tensor& x, const MultiHeadParams& p, int heads, MaskKind kind,
                            const LayerMasks& masks);

}  // namespace capl
