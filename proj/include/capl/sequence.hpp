#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "capl/tensor.hpp"

namespace capl {

// Which segment a position belongs to. Image indices are 1-based, matching
// the interleaved layout I_1,T_1,...,I_N,T_N.
struct SegmentTag {
  enum class Kind { Visual, Text };
  Kind kind{Kind::Text};
  int index{0};

  static SegmentTag visual(int k) { return {Kind::Visual, k}; }
  static SegmentTag text(int k) { return {Kind::Text, k}; }
  bool is_visual() const { return kind == Kind::Visual; }
  bool operator==(const SegmentTag&) const = default;
};

struct IndexRange {
  std::size_t begin{0};
  std::size_t end{0};  // half-open
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
};

// Interleaved multimodal token stream. Visual positions carry patch content
// codes in token_ids; text positions carry vocabulary ids.
struct TokenSequence {
  std::vector<int> token_ids;
  std::vector<SegmentTag> tags;
  std::vector<std::size_t> image_lengths;  // tau_1..tau_N
  std::vector<std::size_t> text_lengths;   // L_1..L_N
  std::optional<Tensor> embeddings;        // T x d, filled by the model pipeline

  std::size_t length() const { return token_ids.size(); }
  int image_count() const { return static_cast<int>(image_lengths.size()); }
};

TokenSequence build_interleaved(const std::vector<std::vector<int>>& image_token_blocks,
                                const std::vector<std::vector<int>>& text_token_blocks);

SegmentTag segment_of(const TokenSequence& seq, std::size_t i);

// Positions tagged Visual(k), as one contiguous half-open range.
IndexRange image_span(const TokenSequence& seq, int k);

// New sequence with tokens appended to the final text segment.
TokenSequence append_text_tokens(const TokenSequence& seq, const std::vector<int>& tokens);

}  // namespace capl
