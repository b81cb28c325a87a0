#pragma once

#include <cstdint>
#include <vector>

#include "capl/model.hpp"
#include "capl/prefgen.hpp"
#include "capl/synthbench.hpp"
#include "capl/tape.hpp"

namespace capl {

struct TrainConfig {
  double beta{0.1};     // DPO temperature
  double lambda{2.5};   // NLL weight
  double lr{1e-4};
  int epochs{30};
  int batch{16};
  std::uint64_t seed{0};
  MaskPolicy policy{};  // masks for both policy and reference scoring
  enum class Objective { CaplDpoNll, NllOnly };
  Objective objective{Objective::CaplDpoNll};
  bool nll_normalize{false};  // divide the NLL sum by answer length
  enum class Optimizer { Adam, Sgd };
  Optimizer optimizer{Optimizer::Adam};

  void validate() const;
};

// Frozen copy of the pre-training parameters (the DPO reference model).
struct ReferenceSnapshot {
  Parameters params;
  std::uint64_t hash{0};

  static ReferenceSnapshot capture(const Parameters& p) {
    return {p, p.content_hash()};
  }
};

// -log sigma(beta*(logratio_plus - logratio_minus)).
double dpo_loss(double logp_plus_theta, double logp_plus_ref, double logp_minus_theta,
                double logp_minus_ref, double beta);

TValue dpo_loss(Tape& tape, TValue logp_plus_theta, double logp_plus_ref, TValue logp_minus_theta,
                double logp_minus_ref, double beta);

// Negative sum (not mean) of the per-token log-probabilities.
double nll_loss(const std::vector<double>& per_token_logprobs);

double total_loss(double dpo, double nll, double lambda);

struct EpochMetrics {
  int epoch{0};
  double total{0.0};
  double dpo{0.0};
  double nll{0.0};
  double reward_acc{0.0};  // fraction of pairs with positive beta-scaled margin
};

struct TrainResult {
  Parameters params;
  std::vector<EpochMetrics> metrics;
  bool diverged{false};
  std::uint64_t reference_hash_before{0};
  std::uint64_t reference_hash_after{0};
};

// Minibatch descent on the combined objective. Policy and reference
// log-probs are both computed under config.policy; the reference is never
// updated. On a non-finite loss the run aborts and returns the parameters
// from the last completed epoch.
TrainResult train(const ModelConfig& cfg, Parameters initial, const std::vector<Sample>& dataset,
                  const std::vector<PreferencePair>& pairs, const TrainConfig& config);

}  // namespace capl
