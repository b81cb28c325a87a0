#include "capl/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace capl {

const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::Causal: return "causal";
    case MaskKind::CrossSelective: return "cross-selective";
    case MaskKind::Truncated: return "truncated";
    case MaskKind::FusedCausalSelective: return "fused";
  }
  return "?";
}

MaskKind mask_kind_from_name(const std::string& name) {
  if (name == "causal") return MaskKind::Causal;
  if (name == "cross-selective") return MaskKind::CrossSelective;
  if (name == "truncated") return MaskKind::Truncated;
  if (name == "fused") return MaskKind::FusedCausalSelective;
  throw std::invalid_argument("unknown mask kind '" + name +
                              "' (valid: causal, cross-selective, truncated, fused)");
}

Tensor AttentionMask::additive() const {
  Tensor t({size, size});
  for (std::size_t i = 0; i < visible.size(); ++i) t.data[i] = visible[i] ? 0.0 : kMaskSentinel;
  return t;
}

std::string AttentionMask::dump(const std::string& kind_name) const {
  std::ostringstream os;
  os << "T=" << size << " kind=" << kind_name << "\n";
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) os << (at(i, j) ? '1' : '0');
    os << "\n";
  }
  return os.str();
}

AttentionMask AttentionMask::parse_dump(const std::string& text, std::string* kind_name) {
  std::istringstream is(text);
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("mask dump: missing header");
  std::size_t t = 0;
  std::string kind;
  if (header.rfind("T=", 0) != 0) throw std::runtime_error("mask dump: malformed header");
  const auto space = header.find(' ');
  if (space == std::string::npos || header.compare(space + 1, 5, "kind=") != 0) {
    throw std::runtime_error("mask dump: malformed header");
  }
  t = static_cast<std::size_t>(std::stoull(header.substr(2, space - 2)));
  kind = header.substr(space + 6);
  AttentionMask mask(t);
  for (std::size_t i = 0; i < t; ++i) {
    std::string row;
    if (!std::getline(is, row) || row.size() != t) {
      throw std::runtime_error("mask dump: row " + std::to_string(i) + " malformed");
    }
    for (std::size_t j = 0; j < t; ++j) {
      if (row[j] != '0' && row[j] != '1') throw std::runtime_error("mask dump: bad cell");
      mask.set(i, j, row[j] == '1');
    }
  }
  if (kind_name) *kind_name = kind;
  return mask;
}

AttentionMask causal_mask(std::size_t t) {
  if (t == 0) throw std::invalid_argument("causal_mask: length must be >= 1");
  AttentionMask mask(t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask.set(i, j, true);
  }
  return mask;
}

namespace {

// -1 for text positions, 1-based image index for visual ones.
std::vector<int> image_index_of(const TokenSequence& seq) {
  std::vector<int> g(seq.length(), -1);
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (seq.tags[i].is_visual()) g[i] = seq.tags[i].index;
  }
  return g;
}

}  // namespace

AttentionMask cross_image_mask(const TokenSequence& seq) {
  const std::size_t t = seq.length();
  AttentionMask mask = causal_mask(t);
  const auto g = image_index_of(seq);
  for (std::size_t i = 0; i < t; ++i) {
    if (g[i] < 0) continue;
    for (std::size_t j = 0; j < t; ++j) {
      if (g[j] < 0 || g[j] == g[i]) continue;
      mask.set(i, j, true);
    }
  }
  return mask;
}

AttentionMask truncated_mask(const TokenSequence& seq) {
  const std::size_t t = seq.length();
  AttentionMask mask = causal_mask(t);
  const auto g = image_index_of(seq);
  for (std::size_t i = 0; i < t; ++i) {
    if (g[i] < 0) continue;
    for (std::size_t j = 0; j < t; ++j) {
      if (g[j] < 0 || g[j] == g[i]) continue;
      mask.set(i, j, false);
    }
  }
  return mask;
}

bool KeyTokenSet::contains(int k, std::size_t pos) const {
  const auto& s = sets[static_cast<std::size_t>(k - 1)];
  return std::binary_search(s.begin(), s.end(), pos);
}

std::vector<std::vector<double>> response_intensity(const Tensor& embeddings,
                                                    const TokenSequence& seq) {
  if (embeddings.ndim() != 2 || embeddings.rows() != seq.length()) {
    throw std::invalid_argument("response_intensity: embeddings must cover all " +
                                std::to_string(seq.length()) + " positions");
  }
  const std::size_t d = embeddings.cols();
  std::vector<std::vector<double>> scores;
  scores.reserve(seq.image_lengths.size());
  for (int k = 1; k <= seq.image_count(); ++k) {
    const IndexRange span = image_span(seq, k);
    std::vector<double> s;
    s.reserve(span.size());
    for (std::size_t i = span.begin; i < span.end; ++i) {
      double acc = 0.0;
      const double* row = embeddings.row_ptr(i);
      for (std::size_t c = 0; c < d; ++c) acc += row[c] * row[c];
      s.push_back(std::sqrt(acc));
    }
    scores.push_back(std::move(s));
  }
  return scores;
}

KeyTokenSet select_key_tokens(const std::vector<std::vector<double>>& scores,
                              const TokenSequence& seq, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("select_key_tokens: rho must be in (0,1], got " +
                                std::to_string(rho));
  }
  if (static_cast<int>(scores.size()) != seq.image_count()) {
    throw std::invalid_argument("select_key_tokens: scores must cover every image");
  }
  KeyTokenSet keys;
  keys.rho = rho;
  for (int k = 1; k <= seq.image_count(); ++k) {
    const IndexRange span = image_span(seq, k);
    const auto& s = scores[static_cast<std::size_t>(k - 1)];
    if (s.size() != span.size()) {
      throw std::invalid_argument("select_key_tokens: score count mismatch for image " +
                                  std::to_string(k));
    }
    const std::size_t tau = span.size();
    // floor(rho*tau) can hit 0 at toy scales; keep at least the argmax so the
    // image still participates in cross-image interaction.
    std::size_t count = static_cast<std::size_t>(std::floor(rho * static_cast<double>(tau)));
    count = std::max<std::size_t>(1, std::min(count, tau));
    std::vector<std::size_t> order(tau);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    std::vector<std::size_t> picked(order.begin(), order.begin() + count);
    for (std::size_t& p : picked) p += span.begin;
    std::sort(picked.begin(), picked.end());
    keys.sets.push_back(std::move(picked));
  }
  return keys;
}

AttentionMask selective_cross_mask(const TokenSequence& seq, const KeyTokenSet& keys) {
  if (keys.image_count() != seq.image_count()) {
    throw std::invalid_argument("selective_cross_mask: key sets must cover every image");
  }
  for (int k = 1; k <= seq.image_count(); ++k) {
    const IndexRange span = image_span(seq, k);
    const auto& s = keys.sets[static_cast<std::size_t>(k - 1)];
    if (s.empty() || s.size() > span.size()) {
      throw std::invalid_argument("selective_cross_mask: key set size invalid for image " +
                                  std::to_string(k));
    }
    for (std::size_t pos : s) {
      if (!span.contains(pos)) {
        throw std::invalid_argument("selective_cross_mask: key position " + std::to_string(pos) +
                                    " outside image " + std::to_string(k));
      }
    }
  }
  const std::size_t t = seq.length();
  AttentionMask mask = causal_mask(t);
  const auto g = image_index_of(seq);
  for (std::size_t i = 0; i < t; ++i) {
    if (g[i] < 0 || !keys.contains(g[i], i)) continue;
    for (std::size_t j = 0; j < t; ++j) {
      if (g[j] < 0 || g[j] == g[i] || !keys.contains(g[j], j)) continue;
      mask.set(i, j, true);
    }
  }
  return mask;
}

MaskPolicy MaskPolicy::alternating(MaskKind odd) {
  if (odd != MaskKind::CrossSelective && odd != MaskKind::FusedCausalSelective) {
    throw std::invalid_argument("alternating policy: odd layers take cross-selective or fused");
  }
  MaskPolicy p;
  p.mode = Mode::Alternating;
  p.odd_kind = odd;
  return p;
}

MaskPolicy MaskPolicy::uniform(MaskKind k) {
  MaskPolicy p;
  p.mode = Mode::Uniform;
  p.uniform_kind = k;
  return p;
}

bool MaskPolicy::needs_selective() const {
  if (mode == Mode::Alternating) return true;
  return uniform_kind == MaskKind::CrossSelective || uniform_kind == MaskKind::FusedCausalSelective;
}

std::string MaskPolicy::name() const {
  if (mode == Mode::Alternating) {
    return odd_kind == MaskKind::FusedCausalSelective ? "alternating"
                                                      : "alternating-selective";
  }
  return mask_kind_name(uniform_kind);
}

MaskPolicy MaskPolicy::from_name(const std::string& name) {
  if (name == "alternating") return alternating(MaskKind::FusedCausalSelective);
  if (name == "alternating-selective") return alternating(MaskKind::CrossSelective);
  return uniform(mask_kind_from_name(name));
}

MaskKind mask_for_layer(int layer_index, const MaskPolicy& policy) {
  if (layer_index < 1) throw std::invalid_argument("mask_for_layer: layer index is 1-based");
  if (policy.mode == MaskPolicy::Mode::Uniform) return policy.uniform_kind;
  return (layer_index % 2 == 1) ? policy.odd_kind : MaskKind::Causal;
}

}  // namespace capl
