#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "capl/attention.hpp"
#include "capl/masks.hpp"
#include "capl/sequence.hpp"
#include "capl/tape.hpp"
#include "capl/tensor.hpp"

namespace capl {

// Toy image cells: 0 = empty, otherwise 1 + color*kNumShapes + shape.
inline constexpr int kNumColors = 6;
inline constexpr int kNumShapes = 4;
inline constexpr int kCellEmpty = 0;
inline constexpr int kCellCodes = 1 + kNumColors * kNumShapes;

inline int cell_code(int color, int shape) { return 1 + color * kNumShapes + shape; }
inline int cell_color(int code) { return code == kCellEmpty ? -1 : (code - 1) / kNumShapes; }
inline int cell_shape(int code) { return code == kCellEmpty ? -1 : (code - 1) % kNumShapes; }

// Row-major grid*grid cell codes.
using ImageGrid = std::vector<int>;

struct ModelConfig {
  int layers{4};
  int heads{2};
  int d_model{32};
  int vocab{64};
  int grid{3};
  int patch{1};
  int max_seq{64};
  MaskPolicy policy{};
  double rho{0.95};
  // Which hidden states feed key-token selection: raw visual-encoder outputs,
  // or those plus the sequence position embeddings (the exact layer-0 input).
  enum class IntensitySource { Encoder, Layer0 };
  IntensitySource intensity_source{IntensitySource::Encoder};
  std::uint64_t seed{0};

  int patches_per_side() const { return grid / patch; }
  int tau() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return kCellCodes * patch * patch; }
  void validate() const;
};

// Named tensors in fixed creation order; the order defines the checkpoint
// layout and the optimizer state alignment.
struct Parameters {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  std::size_t count() const { return items.size(); }
  std::uint64_t content_hash() const;
};

Parameters init_parameters(const ModelConfig& cfg);

// Parameters registered as leaves on a tape.
struct ParamNodes {
  std::vector<std::pair<std::string, TValue>> items;
  TValue at(const std::string& name) const;
};

ParamNodes register_params(Tape& tape, const Parameters& params, bool requires_grad);

// One embedding per patch: linear projection of the one-hot patch content
// plus learned 2-D (row/column) position embeddings.
Tensor encode_image(const ImageGrid& image, const ModelConfig& cfg, const Parameters& params);
TValue encode_image(Tape& tape, const ImageGrid& image, const ModelConfig& cfg,
                    const ParamNodes& p);

// Final hidden states (T x d_model) under a per-layer mask policy.
TValue hidden_states(Tape& tape, const TokenSequence& seq, const ModelConfig& cfg,
                     const ParamNodes& p, const MaskPolicy& policy);

// Full T x vocab logits.
Tensor forward(const TokenSequence& seq, const ModelConfig& cfg, const Parameters& params,
               const MaskPolicy& policy);

// Greedy decoding, appending to the final text segment; stops at end_token
// (pass -1 for none) or after max_new tokens.
std::vector<int> generate(const TokenSequence& prompt, const ModelConfig& cfg,
                          const Parameters& params, const MaskPolicy& policy, int max_new,
                          int end_token = -1);

// Teacher-forced log pi(answer | prompt), summed over answer tokens.
double sequence_logprob(const TokenSequence& prompt, const std::vector<int>& answer,
                        const ModelConfig& cfg, const Parameters& params,
                        const MaskPolicy& policy);

TValue sequence_logprob(Tape& tape, const TokenSequence& prompt, const std::vector<int>& answer,
                        const ModelConfig& cfg, const ParamNodes& p, const MaskPolicy& policy);

// Log-probs of two alternative answers to one prompt; single-token answers
// share one forward pass.
struct PairLogProbs {
  TValue plus;
  TValue minus;
};

PairLogProbs pair_logprobs(Tape& tape, const TokenSequence& prompt,
                           const std::vector<int>& y_plus, const std::vector<int>& y_minus,
                           const ModelConfig& cfg, const ParamNodes& p, const MaskPolicy& policy);

}  // namespace capl
