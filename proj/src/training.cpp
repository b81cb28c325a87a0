#include "capl/training.hpp"

#include <cmath>
#include <stdexcept>

#include "capl/util.hpp"

namespace capl {

void TrainConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("train config: beta must be > 0");
  if (lambda < 0.0) throw std::invalid_argument("train config: lambda must be >= 0");
  if (lr < 0.0) throw std::invalid_argument("train config: learning rate must be >= 0");
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
}

double dpo_loss(double logp_plus_theta, double logp_plus_ref, double logp_minus_theta,
                double logp_minus_ref, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("dpo_loss: beta must be > 0");
  for (double v : {logp_plus_theta, logp_plus_ref, logp_minus_theta, logp_minus_ref}) {
    if (!std::isfinite(v)) throw std::invalid_argument("dpo_loss: non-finite log-probability");
  }
  const double margin =
      beta * ((logp_plus_theta - logp_plus_ref) - (logp_minus_theta - logp_minus_ref));
  return -stable_log_sigmoid(margin);
}

TValue dpo_loss(Tape& tape, TValue logp_plus_theta, double logp_plus_ref, TValue logp_minus_theta,
                double logp_minus_ref, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("dpo_loss: beta must be > 0");
  if (!std::isfinite(logp_plus_ref) || !std::isfinite(logp_minus_ref)) {
    throw std::invalid_argument("dpo_loss: non-finite reference log-probability");
  }
  TValue diff = tape.sub(logp_plus_theta, logp_minus_theta);
  TValue shifted = tape.add(diff, tape.constant_scalar(logp_minus_ref - logp_plus_ref));
  return tape.scale(tape.logsigmoid(tape.scale(shifted, beta)), -1.0);
}

double nll_loss(const std::vector<double>& per_token_logprobs) {
  if (per_token_logprobs.empty()) throw std::invalid_argument("nll_loss: empty answer");
  double s = 0.0;
  for (double lp : per_token_logprobs) s += lp;
  return -s;
}

double total_loss(double dpo, double nll, double lambda) { return dpo + lambda * nll; }

namespace {

class AdamState {
 public:
  explicit AdamState(const Parameters& params) {
    m_.reserve(params.items.size());
    v_.reserve(params.items.size());
    for (const auto& [name, t] : params.items) {
      m_.push_back(Tensor::zeros(t.shape));
      v_.push_back(Tensor::zeros(t.shape));
    }
  }

  void step(Parameters& params, const std::vector<Tensor>& grads, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      Tensor& p = params.items[i].second;
      const Tensor& g = grads[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < p.numel(); ++j) {
        m.data[j] = b1 * m.data[j] + (1.0 - b1) * g.data[j];
        v.data[j] = b2 * v.data[j] + (1.0 - b2) * g.data[j] * g.data[j];
        const double mhat = m.data[j] / c1;
        const double vhat = v.data[j] / c2;
        p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  std::vector<Tensor> m_, v_;
  std::size_t t_{0};
};

void sgd_step(Parameters& params, const std::vector<Tensor>& grads, double lr) {
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    Tensor& p = params.items[i].second;
    for (std::size_t j = 0; j < p.numel(); ++j) p.data[j] -= lr * grads[i].data[j];
  }
}

}  // namespace

TrainResult train(const ModelConfig& cfg, Parameters initial, const std::vector<Sample>& dataset,
                  const std::vector<PreferencePair>& pairs, const TrainConfig& config) {
  config.validate();
  cfg.validate();
  if (pairs.empty()) {
    throw std::invalid_argument("train: empty pair set; preference generation left nothing");
  }
  for (const PreferencePair& pair : pairs) {
    if (pair.sample_index >= dataset.size()) {
      throw std::invalid_argument("train: pair references sample outside dataset");
    }
  }

  const ReferenceSnapshot reference = ReferenceSnapshot::capture(initial);
  TrainResult result;
  result.reference_hash_before = reference.hash;

  // Prompts and reference log-probs are constant across the run.
  std::vector<TokenSequence> prompts;
  prompts.reserve(pairs.size());
  for (const PreferencePair& pair : pairs) {
    prompts.push_back(sample_to_sequence(dataset[pair.sample_index]));
  }
  std::vector<std::pair<double, double>> ref_lp(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Tape tape(false);
    ParamNodes nodes = register_params(tape, reference.params, false);
    PairLogProbs lp = pair_logprobs(tape, prompts[i], pairs[i].y_plus, pairs[i].y_minus, cfg,
                                    nodes, config.policy);
    ref_lp[i] = {lp.plus.value().data[0], lp.minus.value().data[0]};
  }

  Parameters params = std::move(initial);
  Parameters last_good = params;
  AdamState adam(params);
  Rng order_rng(mix_seed(config.seed, 0x5u));

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Tensor> grad_acc;
  grad_acc.reserve(params.items.size());
  for (const auto& [name, t] : params.items) grad_acc.push_back(Tensor::zeros(t.shape));

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    // Deterministic per-epoch shuffle.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[order_rng.below(i)]);
    }
    double sum_total = 0.0, sum_dpo = 0.0, sum_nll = 0.0;
    std::size_t rewarded = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      for (Tensor& g : grad_acc) std::fill(g.data.begin(), g.data.end(), 0.0);
      for (std::size_t bi = start; bi < stop; ++bi) {
        const std::size_t idx = order[bi];
        const PreferencePair& pair = pairs[idx];
        Tape tape(true);
        ParamNodes nodes = register_params(tape, params, true);
        PairLogProbs lp =
            pair_logprobs(tape, prompts[idx], pair.y_plus, pair.y_minus, cfg, nodes, config.policy);
        TValue nll = tape.scale(lp.plus, -1.0);
        if (config.nll_normalize) {
          nll = tape.scale(nll, 1.0 / static_cast<double>(pair.y_plus.size()));
        }
        TValue dpo = dpo_loss(tape, lp.plus, ref_lp[idx].first, lp.minus, ref_lp[idx].second,
                              config.beta);
        TValue loss = config.objective == TrainConfig::Objective::NllOnly
                          ? nll
                          : tape.add(dpo, tape.scale(nll, config.lambda));
        const double loss_v = loss.value().data[0];
        const double dpo_v = dpo.value().data[0];
        const double nll_v = nll.value().data[0];
        if (!std::isfinite(loss_v)) {
          result.diverged = true;
          result.params = std::move(last_good);
          result.reference_hash_after = reference.params.content_hash();
          return result;
        }
        sum_total += config.objective == TrainConfig::Objective::NllOnly
                         ? nll_v
                         : total_loss(dpo_v, nll_v, config.lambda);
        sum_dpo += dpo_v;
        sum_nll += nll_v;
        const double margin = config.beta * ((lp.plus.value().data[0] - ref_lp[idx].first) -
                                             (lp.minus.value().data[0] - ref_lp[idx].second));
        if (margin > 0.0) ++rewarded;
        tape.backward(loss);
        for (std::size_t pi = 0; pi < nodes.items.size(); ++pi) {
          const Tensor& g = tape.grad(nodes.items[pi].second);
          if (g.numel() == 0) continue;
          for (std::size_t j = 0; j < g.numel(); ++j) grad_acc[pi].data[j] += g.data[j];
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (Tensor& g : grad_acc) {
        for (double& v : g.data) v *= inv;
      }
      if (config.optimizer == TrainConfig::Optimizer::Adam) {
        adam.step(params, grad_acc, config.lr);
      } else {
        sgd_step(params, grad_acc, config.lr);
      }
    }
    const double n = static_cast<double>(pairs.size());
    result.metrics.push_back({epoch, sum_total / n, sum_dpo / n, sum_nll / n,
                              static_cast<double>(rewarded) / n});
    last_good = params;
  }

  result.params = std::move(params);
  result.reference_hash_after = reference.params.content_hash();
  return result;
}

}  // namespace capl
