#pragma once

#include <cstddef>
#include <vector>

#include "capl/model.hpp"
#include "capl/synthbench.hpp"

namespace capl {

// Chosen/rejected response pair for one sample. y_plus always equals the
// oracle answer; y_minus was generated under the truncated mask.
struct PreferencePair {
  enum class PlusSource { Model, OracleCorrected };

  std::size_t sample_index{0};
  std::vector<int> y_plus;
  std::vector<int> y_minus;
  PlusSource plus_source{PlusSource::Model};
};

struct PairGenResult {
  std::vector<PreferencePair> pairs;
  std::size_t discarded{0};

  std::size_t total() const { return pairs.size() + discarded; }
  double discard_rate() const {
    return total() ? static_cast<double>(discarded) / static_cast<double>(total()) : 0.0;
  }
};

// Positives: greedy generation under the configured inference policy,
// replaced by the oracle answer when wrong. Negatives: greedy generation
// under the uniform truncated mask. Pairs whose sides coincide are dropped.
PairGenResult make_pairs(const ModelConfig& cfg, const Parameters& params,
                         const std::vector<Sample>& dataset);

struct NegativeDifficultyReport {
  double causal_accuracy{0.0};
  double truncated_accuracy{0.0};
  std::size_t count{0};
};

// Accuracy of greedy generations under the causal vs the truncated mask on
// the same dataset; lower truncated accuracy means harder negatives.
NegativeDifficultyReport negative_difficulty_report(const ModelConfig& cfg,
                                                    const Parameters& params,
                                                    const std::vector<Sample>& dataset);

}  // namespace capl
