#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capl/sequence.hpp"
#include "capl/tensor.hpp"

namespace capl {

// Additive-mask stand-in for -inf; masked softmax entries are hard-zeroed
// afterwards so "masked => exactly 0" holds bit-exactly.
inline constexpr double kMaskSentinel = -1e9;

enum class MaskKind { Causal, CrossSelective, Truncated, FusedCausalSelective };

const char* mask_kind_name(MaskKind k);
MaskKind mask_kind_from_name(const std::string& name);

// T x T visibility matrix; true = additive 0, false = sentinel.
struct AttentionMask {
  std::size_t size{0};
  std::vector<std::uint8_t> visible;

  AttentionMask() = default;
  explicit AttentionMask(std::size_t t) : size(t), visible(t * t, 0) {}

  bool at(std::size_t i, std::size_t j) const { return visible[i * size + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { visible[i * size + j] = v ? 1 : 0; }

  Tensor additive() const;  // 0 / kMaskSentinel
  bool operator==(const AttentionMask&) const = default;

  // `T=<n> kind=<name>` header then T rows of '1'/'0'. Bit-exact.
  std::string dump(const std::string& kind_name) const;
  static AttentionMask parse_dump(const std::string& text, std::string* kind_name = nullptr);
};

AttentionMask causal_mask(std::size_t t);
AttentionMask cross_image_mask(const TokenSequence& seq);
AttentionMask truncated_mask(const TokenSequence& seq);

// Per-image key-token sets S_k (absolute positions, sorted ascending).
struct KeyTokenSet {
  std::vector<std::vector<std::size_t>> sets;  // sets[k-1]
  double rho{1.0};

  int image_count() const { return static_cast<int>(sets.size()); }
  bool contains(int k, std::size_t pos) const;
};

// L2 norms of visual-token embeddings, grouped per image; scores[k-1][i]
// belongs to the i-th token of image k.
std::vector<std::vector<double>> response_intensity(const Tensor& embeddings,
                                                    const TokenSequence& seq);

// Top max(1, floor(rho*tau_k)) positions per image; ties broken by lower
// position index.
KeyTokenSet select_key_tokens(const std::vector<std::vector<double>>& scores,
                              const TokenSequence& seq, double rho);

AttentionMask selective_cross_mask(const TokenSequence& seq, const KeyTokenSet& keys);

// Per-layer mask schedule. Alternating keeps the causal mask on even layers
// and applies `odd_kind` (selective or its fused-with-causal variant) on odd
// layers; Uniform applies one kind everywhere.
struct MaskPolicy {
  enum class Mode { Alternating, Uniform };
  Mode mode{Mode::Alternating};
  MaskKind odd_kind{MaskKind::FusedCausalSelective};
  MaskKind uniform_kind{MaskKind::Causal};

  static MaskPolicy alternating(MaskKind odd = MaskKind::FusedCausalSelective);
  static MaskPolicy uniform(MaskKind k);
  bool operator==(const MaskPolicy&) const = default;

  bool needs_selective() const;
  std::string name() const;
  static MaskPolicy from_name(const std::string& name);
};

MaskKind mask_for_layer(int layer_index, const MaskPolicy& policy);  // layer_index is 1-based

}  // namespace capl
