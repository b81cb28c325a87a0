#include "capl/prefgen.hpp"

#include <stdexcept>

namespace capl {

PairGenResult make_pairs(const ModelConfig& cfg, const Parameters& params,
                         const std::vector<Sample>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("make_pairs: empty dataset");
  const MaskPolicy truncated = MaskPolicy::uniform(MaskKind::Truncated);
  PairGenResult result;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Sample& sample = dataset[i];
    const TokenSequence prompt = sample_to_sequence(sample);
    const int oracle = oracle_answer(sample);
    const int candidate = generate(prompt, cfg, params, cfg.policy, 1).front();
    const int negative = generate(prompt, cfg, params, truncated, 1).front();
    PreferencePair pair;
    pair.sample_index = i;
    pair.y_plus = {oracle};
    pair.plus_source = candidate == oracle ? PreferencePair::PlusSource::Model
                                           : PreferencePair::PlusSource::OracleCorrected;
    pair.y_minus = {negative};
    if (pair.y_plus == pair.y_minus) {
      ++result.discarded;
      continue;
    }
    result.pairs.push_back(std::move(pair));
  }
  return result;
}

NegativeDifficultyReport negative_difficulty_report(const ModelConfig& cfg,
                                                    const Parameters& params,
                                                    const std::vector<Sample>& dataset) {
  if (dataset.empty()) {
    throw std::invalid_argument("negative_difficulty_report: empty dataset");
  }
  const MaskPolicy causal = MaskPolicy::uniform(MaskKind::Causal);
  const MaskPolicy truncated = MaskPolicy::uniform(MaskKind::Truncated);
  NegativeDifficultyReport report;
  report.count = dataset.size();
  std::size_t causal_correct = 0, truncated_correct = 0;
  for (const Sample& sample : dataset) {
    const TokenSequence prompt = sample_to_sequence(sample);
    const int gold = sample.gold;
    if (generate(prompt, cfg, params, causal, 1).front() == gold) ++causal_correct;
    if (generate(prompt, cfg, params, truncated, 1).front() == gold) ++truncated_correct;
  }
  report.causal_accuracy = static_cast<double>(causal_correct) / static_cast<double>(report.count);
  report.truncated_accuracy =
      static_cast<double>(truncated_correct) / static_cast<double>(report.count);
  return report;
}

}  // namespace capl
