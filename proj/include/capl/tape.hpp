#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "capl/masks.hpp"
#include "capl/tensor.hpp"

namespace capl {

class Tape;

// Handle to a value recorded on a tape.
struct TValue {
  Tape* tape{nullptr};
  std::size_t id{0};

  const Tensor& value() const;
  bool valid() const { return tape != nullptr; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order; backward() replays them in exact reverse. Gradients
// accumulate additively. Ops register a backward closure only when an input
// requires gradients (and the tape has gradients enabled), so inference can
// run on a grad-disabled tape at plain-evaluation cost.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  TValue leaf(Tensor v, bool requires_grad = false);
  TValue constant(Tensor v) { return leaf(std::move(v), false); }
  TValue constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

  TValue matmul(TValue a, TValue b);
  TValue transpose(TValue a);
  TValue add(TValue a, TValue b);
  TValue sub(TValue a, TValue b);
  TValue hadamard(TValue a, TValue b);
  TValue scale(TValue a, double c);
  TValue add_row_vector(TValue m, TValue row);
  TValue row_concat(const std::vector<TValue>& parts);
  TValue row_select(TValue a, std::vector<std::size_t> rows);
  TValue col_slice(TValue a, std::size_t offset, std::size_t len);
  TValue col_concat(const std::vector<TValue>& parts);
  TValue embedding_lookup(TValue table, std::vector<std::size_t> ids);
  TValue layer_norm(TValue x, TValue gamma, TValue beta);
  TValue gelu(TValue x);
  TValue masked_row_softmax(TValue logits, const AttentionMask& mask);
  TValue log_softmax_rows(TValue x);
  TValue select_scalar(TValue x, std::size_t r, std::size_t c);
  TValue sum_all(TValue x);
  TValue sum(const std::vector<TValue>& xs);
  TValue logsigmoid(TValue x);

  // Seeds d(loss)/d(loss)=1 and replays the tape in reverse; loss must be a
  // scalar node of this tape.
  void backward(TValue loss);

  const Tensor& value(TValue v) const;
  const Tensor& grad(TValue v) const;

  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad{false};
    std::function<void(Tape&)> backprop;  // set only for interior nodes that need it
  };

  TValue push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop);
  Node& node(std::size_t id) { return nodes_[id]; }
  Tensor& grad_buffer(std::size_t id);
  bool wants_grad(TValue v) const;
  void check_owned(TValue v, const char* op) const;

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool ran_backward_{false};
};

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace capl
