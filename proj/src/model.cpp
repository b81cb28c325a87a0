#include "capl/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "capl/util.hpp"

namespace capl {

void ModelConfig::validate() const {
  if (layers < 2) throw std::invalid_argument("config: layers must be >= 2");
  if (heads < 1) throw std::invalid_argument("config: heads must be >= 1");
  if (d_model < 1 || d_model % heads != 0) {
    throw std::invalid_argument("config: d_model must be a positive multiple of heads");
  }
  if (vocab < 2) throw std::invalid_argument("config: vocab must be >= 2");
  if (grid < 1) throw std::invalid_argument("config: grid must be >= 1");
  if (patch < 1 || grid % patch != 0) {
    throw std::invalid_argument("config: patch must divide grid");
  }
  if (max_seq < 2) throw std::invalid_argument("config: max_seq must be >= 2");
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("config: rho must be in (0,1]");
}

Tensor& Parameters::at(const std::string& name) {
  for (auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw std::out_of_range("parameters: no tensor named '" + name + "'");
}

const Tensor& Parameters::at(const std::string& name) const {
  for (const auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw std::out_of_range("parameters: no tensor named '" + name + "'");
}

bool Parameters::has(const std::string& name) const {
  for (const auto& [n, t] : items) {
    if (n == name) return true;
  }
  return false;
}

std::uint64_t Parameters::content_hash() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : items) {
    h = fnv1a64(name, h);
    for (std::size_t d : t.shape) h = fnv1a64(&d, sizeof(d), h);
    h = fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
  }
  return h;
}

namespace {

constexpr double kInitStd = 0.08;

void add_normal(Parameters& params, Rng& rng, const std::string& name,
                std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal(0.0, kInitStd);
  params.items.emplace_back(name, std::move(t));
}

void add_const(Parameters& params, const std::string& name, std::vector<std::size_t> shape,
               double value) {
  params.items.emplace_back(name, Tensor::full(std::move(shape), value));
}

std::string layer_name(int l, const char* suffix) {
  return "layer" + std::to_string(l) + "." + suffix;
}

}  // namespace

Parameters init_parameters(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0x70A7A));
  Parameters params;
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto v = static_cast<std::size_t>(cfg.vocab);
  const auto hidden = 4 * d;
  add_normal(params, rng, "tok_emb", {v, d});
  add_normal(params, rng, "pos_emb", {static_cast<std::size_t>(cfg.max_seq), d});
  add_normal(params, rng, "enc_proj", {static_cast<std::size_t>(cfg.patch_dim()), d});
  add_normal(params, rng, "enc_row", {static_cast<std::size_t>(cfg.patches_per_side()), d});
  add_normal(params, rng, "enc_col", {static_cast<std::size_t>(cfg.patches_per_side()), d});
  for (int l = 0; l < cfg.layers; ++l) {
    add_const(params, layer_name(l, "ln1.g"), {d}, 1.0);
    add_const(params, layer_name(l, "ln1.b"), {d}, 0.0);
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      add_normal(params, rng, layer_name(l, w), {d, d});
    }
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
      add_const(params, layer_name(l, b), {d}, 0.0);
    }
    add_const(params, layer_name(l, "ln2.g"), {d}, 1.0);
    add_const(params, layer_name(l, "ln2.b"), {d}, 0.0);
    add_normal(params, rng, layer_name(l, "ffn.w1"), {d, hidden});
    add_const(params, layer_name(l, "ffn.b1"), {hidden}, 0.0);
    add_normal(params, rng, layer_name(l, "ffn.w2"), {hidden, d});
    add_const(params, layer_name(l, "ffn.b2"), {d}, 0.0);
  }
  add_const(params, "final_ln.g", {d}, 1.0);
  add_const(params, "final_ln.b", {d}, 0.0);
  add_normal(params, rng, "head.w", {d, v});
  add_const(params, "head.b", {v}, 0.0);
  return params;
}

TValue ParamNodes::at(const std::string& name) const {
  for (const auto& [n, v] : items) {
    if (n == name) return v;
  }
  throw std::out_of_range("param nodes: no tensor named '" + name + "'");
}

ParamNodes register_params(Tape& tape, const Parameters& params, bool requires_grad) {
  ParamNodes nodes;
  nodes.items.reserve(params.items.size());
  for (const auto& [name, t] : params.items) {
    nodes.items.emplace_back(name, tape.leaf(t, requires_grad));
  }
  return nodes;
}

namespace {

void check_image(const ImageGrid& image, const ModelConfig& cfg) {
  const auto cells = static_cast<std::size_t>(cfg.grid) * static_cast<std::size_t>(cfg.grid);
  if (image.size() != cells) {
    throw std::invalid_argument("encode_image: expected " + std::to_string(cells) +
                                " cells, got " + std::to_string(image.size()));
  }
  for (int code : image) {
    if (code < 0 || code >= kCellCodes) {
      throw std::invalid_argument("encode_image: cell code " + std::to_string(code) +
                                  " outside [0," + std::to_string(kCellCodes) + ")");
    }
  }
}

// One-hot patch contents, one row per patch in row-major patch order.
Tensor patch_one_hot(const ImageGrid& image, const ModelConfig& cfg) {
  const int side = cfg.patches_per_side();
  const int p = cfg.patch;
  Tensor onehot({static_cast<std::size_t>(cfg.tau()), static_cast<std::size_t>(cfg.patch_dim())});
  for (int pr = 0; pr < side; ++pr) {
    for (int pc = 0; pc < side; ++pc) {
      const std::size_t row = static_cast<std::size_t>(pr * side + pc);
      int slot = 0;
      for (int dr = 0; dr < p; ++dr) {
        for (int dc = 0; dc < p; ++dc, ++slot) {
          const int cell = image[static_cast<std::size_t>((pr * p + dr) * cfg.grid + pc * p + dc)];
          onehot.at(row, static_cast<std::size_t>(slot * kCellCodes + cell)) = 1.0;
        }
      }
    }
  }
  return onehot;
}

std::vector<std::size_t> patch_row_ids(const ModelConfig& cfg) {
  const int side = cfg.patches_per_side();
  std::vector<std::size_t> ids;
  ids.reserve(static_cast<std::size_t>(cfg.tau()));
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) ids.push_back(static_cast<std::size_t>(r));
  }
  return ids;
}

std::vector<std::size_t> patch_col_ids(const ModelConfig& cfg) {
  const int side = cfg.patches_per_side();
  std::vector<std::size_t> ids;
  ids.reserve(static_cast<std::size_t>(cfg.tau()));
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) ids.push_back(static_cast<std::size_t>(c));
  }
  return ids;
}

}  // namespace

TValue encode_image(Tape& tape, const ImageGrid& image, const ModelConfig& cfg,
                    const ParamNodes& p) {
  check_image(image, cfg);
  TValue onehot = tape.constant(patch_one_hot(image, cfg));
  TValue projected = tape.matmul(onehot, p.at("enc_proj"));
  TValue rows = tape.embedding_lookup(p.at("enc_row"), patch_row_ids(cfg));
  TValue cols = tape.embedding_lookup(p.at("enc_col"), patch_col_ids(cfg));
  return tape.add(projected, tape.add(rows, cols));
}

Tensor encode_image(const ImageGrid& image, const ModelConfig& cfg, const Parameters& params) {
  Tape tape(false);
  ParamNodes nodes = register_params(tape, params, false);
  return encode_image(tape, image, cfg, nodes).value();
}

namespace {

struct SequencePlan {
  AttentionMask causal;
  AttentionMask selective;
  AttentionMask truncated;
  bool has_selective{false};
  bool has_truncated{false};

  LayerMasks masks() const {
    LayerMasks m;
    m.causal = &causal;
    m.selective = has_selective ? &selective : nullptr;
    m.truncated = has_truncated ? &truncated : nullptr;
    return m;
  }
};

void check_sequence(const TokenSequence& seq, const ModelConfig& cfg) {
  if (seq.length() == 0) throw std::invalid_argument("forward: empty sequence");
  if (seq.length() > static_cast<std::size_t>(cfg.max_seq)) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(seq.length()) +
                                " exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  for (std::size_t i = 0; i < seq.length(); ++i) {
    const int id = seq.token_ids[i];
    if (seq.tags[i].is_visual()) {
      if (id < 0 || id >= kCellCodes) {
        throw std::invalid_argument("forward: visual code out of range at position " +
                                    std::to_string(i));
      }
    } else if (id < 0 || id >= cfg.vocab) {
      throw std::invalid_argument("forward: token id " + std::to_string(id) +
                                  " outside vocab at position " + std::to_string(i));
    }
  }
}

// Base embeddings: visual-encoder outputs interleaved with text-token rows.
TValue base_embeddings(Tape& tape, const TokenSequence& seq, const ModelConfig& cfg,
                       const ParamNodes& p) {
  std::vector<TValue> pieces;
  const int n = seq.image_count();
  const auto expected_tau = static_cast<std::size_t>(cfg.tau());
  std::size_t cursor = 0;
  for (int k = 1; k <= n; ++k) {
    const std::size_t tau = seq.image_lengths[static_cast<std::size_t>(k - 1)];
    if (tau != expected_tau) {
      throw std::invalid_argument("forward: image " + std::to_string(k) + " has " +
                                  std::to_string(tau) + " tokens, config expects " +
                                  std::to_string(expected_tau));
    }
    ImageGrid image(seq.token_ids.begin() + static_cast<std::ptrdiff_t>(cursor),
                    seq.token_ids.begin() + static_cast<std::ptrdiff_t>(cursor + tau));
    pieces.push_back(encode_image(tape, image, cfg, p));
    cursor += tau;
    const std::size_t text_len = seq.text_lengths[static_cast<std::size_t>(k - 1)];
    if (text_len > 0) {
      std::vector<std::size_t> ids;
      ids.reserve(text_len);
      for (std::size_t i = 0; i < text_len; ++i) {
        ids.push_back(static_cast<std::size_t>(seq.token_ids[cursor + i]));
      }
      pieces.push_back(tape.embedding_lookup(p.at("tok_emb"), ids));
      cursor += text_len;
    }
  }
  return pieces.size() == 1 ? pieces[0] : tape.row_concat(pieces);
}

SequencePlan plan_masks(const TokenSequence& seq, const ModelConfig& cfg,
                        const MaskPolicy& policy, const Tensor& base,
                        const Tensor& with_positions) {
  SequencePlan plan;
  plan.causal = causal_mask(seq.length());
  bool needs_selective = false;
  bool needs_truncated = false;
  for (int l = 1; l <= cfg.layers; ++l) {
    switch (mask_for_layer(l, policy)) {
      case MaskKind::CrossSelective:
      case MaskKind::FusedCausalSelective: needs_selective = true; break;
      case MaskKind::Truncated: needs_truncated = true; break;
      case MaskKind::Causal: break;
    }
  }
  if (needs_selective) {
    const Tensor& source =
        cfg.intensity_source == ModelConfig::IntensitySource::Encoder ? base : with_positions;
    const auto scores = response_intensity(source, seq);
    plan.selective = selective_cross_mask(seq, select_key_tokens(scores, seq, cfg.rho));
    plan.has_selective = true;
  }
  if (needs_truncated) {
    plan.truncated = truncated_mask(seq);
    plan.has_truncated = true;
  }
  return plan;
}

std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

TValue head_logits(Tape& tape, TValue h, const ParamNodes& p) {
  return tape.add_row_vector(tape.matmul(h, p.at("head.w")), p.at("head.b"));
}

}  // namespace

TValue hidden_states(Tape& tape, const TokenSequence& seq, const ModelConfig& cfg,
                     const ParamNodes& p, const MaskPolicy& policy) {
  cfg.validate();
  check_sequence(seq, cfg);
  TValue base = base_embeddings(tape, seq, cfg, p);
  TValue pos = tape.embedding_lookup(p.at("pos_emb"), iota_ids(seq.length()));
  TValue h = tape.add(base, pos);
  const SequencePlan plan = plan_masks(seq, cfg, policy, base.value(), h.value());
  const LayerMasks masks = plan.masks();
  for (int l = 0; l < cfg.layers; ++l) {
    const MaskKind kind = mask_for_layer(l + 1, policy);
    MultiHeadNodes attn{
        p.at(layer_name(l, "attn.wq")), p.at(layer_name(l, "attn.bq")),
        p.at(layer_name(l, "attn.wk")), p.at(layer_name(l, "attn.bk")),
        p.at(layer_name(l, "attn.wv")), p.at(layer_name(l, "attn.bv")),
        p.at(layer_name(l, "attn.wo")), p.at(layer_name(l, "attn.bo"))};
    TValue normed =
        tape.layer_norm(h, p.at(layer_name(l, "ln1.g")), p.at(layer_name(l, "ln1.b")));
    TValue a = multi_head_attention(tape, normed, attn, cfg.heads, kind, masks);
    h = tape.add(h, a);
    TValue normed2 =
        tape.layer_norm(h, p.at(layer_name(l, "ln2.g")), p.at(layer_name(l, "ln2.b")));
    TValue f1 = tape.gelu(tape.add_row_vector(tape.matmul(normed2, p.at(layer_name(l, "ffn.w1"))),
                                              p.at(layer_name(l, "ffn.b1"))));
    TValue f2 = tape.add_row_vector(tape.matmul(f1, p.at(layer_name(l, "ffn.w2"))),
                                    p.at(layer_name(l, "ffn.b2")));
    h = tape.add(h, f2);
  }
  return tape.layer_norm(h, p.at("final_ln.g"), p.at("final_ln.b"));
}

Tensor forward(const TokenSequence& seq, const ModelConfig& cfg, const Parameters& params,
               const MaskPolicy& policy) {
  Tape tape(false);
  ParamNodes nodes = register_params(tape, params, false);
  TValue h = hidden_states(tape, seq, cfg, nodes, policy);
  return head_logits(tape, h, nodes).value();
}

std::vector<int> generate(const TokenSequence& prompt, const ModelConfig& cfg,
                          const Parameters& params, const MaskPolicy& policy, int max_new,
                          int end_token) {
  if (max_new < 1) throw std::invalid_argument("generate: max_new must be >= 1");
  std::vector<int> emitted;
  TokenSequence seq = prompt;
  for (int step = 0; step < max_new; ++step) {
    Tape tape(false);
    ParamNodes nodes = register_params(tape, params, false);
    TValue h = hidden_states(tape, seq, cfg, nodes, policy);
    TValue last = tape.row_select(h, {seq.length() - 1});
    const Tensor logits = head_logits(tape, last, nodes).value();
    int best = 0;
    for (int t = 1; t < cfg.vocab; ++t) {
      if (logits.data[static_cast<std::size_t>(t)] > logits.data[static_cast<std::size_t>(best)]) {
        best = t;
      }
    }
    emitted.push_back(best);
    if (best == end_token) break;
    seq = append_text_tokens(seq, {best});
  }
  return emitted;
}

namespace {

void check_answer(const std::vector<int>& answer, const ModelConfig& cfg) {
  if (answer.empty()) throw std::invalid_argument("sequence_logprob: empty answer");
  for (int t : answer) {
    if (t < 0 || t >= cfg.vocab) {
      throw std::invalid_argument("sequence_logprob: answer token " + std::to_string(t) +
                                  " outside vocab");
    }
  }
}

}  // namespace

TValue sequence_logprob(Tape& tape, const TokenSequence& prompt, const std::vector<int>& answer,
                        const ModelConfig& cfg, const ParamNodes& p, const MaskPolicy& policy) {
  check_answer(answer, cfg);
  const TokenSequence full = append_text_tokens(prompt, answer);
  TValue h = hidden_states(tape, full, cfg, p, policy);
  // Token answer[t] is predicted at position prompt_len - 1 + t.
  std::vector<std::size_t> rows;
  rows.reserve(answer.size());
  for (std::size_t t = 0; t < answer.size(); ++t) rows.push_back(prompt.length() - 1 + t);
  TValue picked = tape.row_select(h, std::move(rows));
  TValue logprobs = tape.log_softmax_rows(head_logits(tape, picked, p));
  std::vector<TValue> terms;
  terms.reserve(answer.size());
  for (std::size_t t = 0; t < answer.size(); ++t) {
    terms.push_back(tape.select_scalar(logprobs, t, static_cast<std::size_t>(answer[t])));
  }
  return tape.sum(terms);
}

double sequence_logprob(const TokenSequence& prompt, const std::vector<int>& answer,
                        const ModelConfig& cfg, const Parameters& params,
                        const MaskPolicy& policy) {
  Tape tape(false);
  ParamNodes nodes = register_params(tape, params, false);
  return sequence_logprob(tape, prompt, answer, cfg, nodes, policy).value().data[0];
}

PairLogProbs pair_logprobs(Tape& tape, const TokenSequence& prompt,
                           const std::vector<int>& y_plus, const std::vector<int>& y_minus,
                           const ModelConfig& cfg, const ParamNodes& p, const MaskPolicy& policy) {
  check_answer(y_plus, cfg);
  check_answer(y_minus, cfg);
  if (y_plus.size() == 1 && y_minus.size() == 1) {
    TValue h = hidden_states(tape, prompt, cfg, p, policy);
    TValue last = tape.row_select(h, {prompt.length() - 1});
    TValue logprobs = tape.log_softmax_rows(head_logits(tape, last, p));
    return {tape.select_scalar(logprobs, 0, static_cast<std::size_t>(y_plus[0])),
            tape.select_scalar(logprobs, 0, static_cast<std::size_t>(y_minus[0]))};
  }
  return {sequence_logprob(tape, prompt, y_plus, cfg, p, policy),
          sequence_logprob(tape, prompt, y_minus, cfg, p, policy)};
}

}  // namespace capl
