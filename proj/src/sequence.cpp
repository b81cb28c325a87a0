#include "capl/sequence.hpp"

#include <stdexcept>
#include <string>

namespace capl {

TokenSequence build_interleaved(const std::vector<std::vector<int>>& image_token_blocks,
                                const std::vector<std::vector<int>>& text_token_blocks) {
  const std::size_t n = image_token_blocks.size();
  if (n == 0) throw std::invalid_argument("build_interleaved: need at least one image block");
  if (text_token_blocks.size() != n) {
    throw std::invalid_argument("build_interleaved: image/text block counts differ (" +
                                std::to_string(n) + " vs " +
                                std::to_string(text_token_blocks.size()) + ")");
  }
  TokenSequence seq;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& img = image_token_blocks[k];
    if (img.empty()) {
      throw std::invalid_argument("build_interleaved: image block " + std::to_string(k + 1) +
                                  " is empty; every image needs at least one token");
    }
    const auto& txt = text_token_blocks[k];
    const int idx = static_cast<int>(k + 1);
    for (int t : img) {
      seq.token_ids.push_back(t);
      seq.tags.push_back(SegmentTag::visual(idx));
    }
    for (int t : txt) {
      seq.token_ids.push_back(t);
      seq.tags.push_back(SegmentTag::text(idx));
    }
    seq.image_lengths.push_back(img.size());
    seq.text_lengths.push_back(txt.size());
  }
  return seq;
}

SegmentTag segment_of(const TokenSequence& seq, std::size_t i) {
  if (i >= seq.length()) {
    throw std::out_of_range("segment_of: position " + std::to_string(i) +
                            " out of range for length " + std::to_string(seq.length()));
  }
  return seq.tags[i];
}

IndexRange image_span(const TokenSequence& seq, int k) {
  if (k < 1 || k > seq.image_count()) {
    throw std::out_of_range("image_span: image index " + std::to_string(k) +
                            " out of range [1, " + std::to_string(seq.image_count()) + "]");
  }
  std::size_t begin = 0;
  for (int j = 1; j < k; ++j) {
    begin += seq.image_lengths[j - 1] + seq.text_lengths[j - 1];
  }
  return {begin, begin + seq.image_lengths[k - 1]};
}

TokenSequence append_text_tokens(const TokenSequence& seq, const std::vector<int>& tokens) {
  TokenSequence out = seq;
  out.embeddings.reset();
  const int last = out.image_count();
  for (int t : tokens) {
    out.token_ids.push_back(t);
    out.tags.push_back(SegmentTag::text(last));
  }
  out.text_lengths.back() += tokens.size();
  return out;
}

}  // namespace capl
