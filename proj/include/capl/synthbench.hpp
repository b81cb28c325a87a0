#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "capl/model.hpp"
#include "capl/sequence.hpp"

namespace capl {

// Fixed toy vocabulary. Answer tokens come first, then question tokens; ids
// above kVocabUsed are unused padding up to the configured vocab size.
namespace tokens {
inline constexpr int kEnd = 0;
inline constexpr int kYes = 1;
inline constexpr int kNo = 2;
inline constexpr int kFirst = 3;
inline constexpr int kSecond = 4;
inline constexpr int kColorBase = 5;  // kColorBase + c for color c
inline constexpr int kShapeBase = kColorBase + kNumColors;
inline constexpr int kAskSameColor = kShapeBase + kNumShapes;  // 15
inline constexpr int kAskSameShape = kAskSameColor + 1;
inline constexpr int kAskCountCompare = kAskSameColor + 2;
inline constexpr int kAskDiffSpot = kAskSameColor + 3;
inline constexpr int kQuery = kAskSameColor + 4;
inline constexpr int kVocabUsed = kQuery + 1;

inline int color_token(int c) { return kColorBase + c; }
}  // namespace tokens

enum class TaskKind { SameColor, SameShape, CountCompare, DifferenceSpot };

const char* task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);
std::vector<TaskKind> all_task_kinds();

// One benchmark item. The relational question is always about images 1 and
// 2; images beyond the first two are distractors that do not affect the
// answer. `prior` is the majority answer of the task distribution, which a
// model ignoring the images would emit.
struct Sample {
  std::vector<ImageGrid> images;
  std::vector<int> question;
  int gold{0};
  int prior{0};
  TaskKind task{TaskKind::SameColor};
};

struct DatasetParams {
  std::uint64_t seed{0};
  std::size_t size{0};
  std::vector<TaskKind> mix = all_task_kinds();  // uniform over listed kinds
  double bias{0.8};
  int grid{3};

  void validate() const;
};

// Deterministic in (seed, index): sample i is generated from its own
// substream, so any prefix of a larger dataset equals the smaller one.
std::vector<Sample> generate_dataset(const DatasetParams& params);

// Ground truth recomputed from the grids alone.
int oracle_answer(const Sample& sample);

// Interleaved prompt: every image followed by an empty text segment except
// the last, which carries the question.
TokenSequence sample_to_sequence(const Sample& sample);

struct TaskStats {
  std::size_t count{0};
  std::size_t correct{0};
  double accuracy() const { return count ? static_cast<double>(correct) / count : 0.0; }
};

struct EvalReport {
  double accuracy{0.0};
  // Fraction of wrong answers equal to the sample's prior answer; 0 when
  // there are no errors.
  double prior_agreement{0.0};
  std::size_t count{0};
  std::map<std::string, TaskStats> by_task;
};

EvalReport evaluate(const ModelConfig& cfg, const Parameters& params,
                    const std::vector<Sample>& dataset, const MaskPolicy& policy);

}  // namespace capl
