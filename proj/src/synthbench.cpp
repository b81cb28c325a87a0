#include "capl/synthbench.hpp"

#include <algorithm>
#include <stdexcept>

#include "capl/util.hpp"

namespace capl {

const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::SameColor: return "same-color";
    case TaskKind::SameShape: return "same-shape";
    case TaskKind::CountCompare: return "count-compare";
    case TaskKind::DifferenceSpot: return "difference-spot";
  }
  return "?";
}

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "same-color") return TaskKind::SameColor;
  if (name == "same-shape") return TaskKind::SameShape;
  if (name == "count-compare") return TaskKind::CountCompare;
  if (name == "difference-spot") return TaskKind::DifferenceSpot;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

std::vector<TaskKind> all_task_kinds() {
  return {TaskKind::SameColor, TaskKind::SameShape, TaskKind::CountCompare,
          TaskKind::DifferenceSpot};
}

void DatasetParams::validate() const {
  if (size < 1) throw std::invalid_argument("dataset: size must be >= 1");
  if (!(bias >= 0.5 && bias <= 0.95)) {
    throw std::invalid_argument("dataset: bias must lie in [0.5, 0.95]");
  }
  if (grid < 2) throw std::invalid_argument("dataset: grid must be >= 2");
  if (mix.empty()) throw std::invalid_argument("dataset: task mix is empty");
}

namespace {

int ask_token(TaskKind k) {
  switch (k) {
    case TaskKind::SameColor: return tokens::kAskSameColor;
    case TaskKind::SameShape: return tokens::kAskSameShape;
    case TaskKind::CountCompare: return tokens::kAskCountCompare;
    case TaskKind::DifferenceSpot: return tokens::kAskDiffSpot;
  }
  throw std::logic_error("ask_token: bad kind");
}

std::vector<std::size_t> distinct_cells(Rng& rng, std::size_t cells, std::size_t count) {
  std::vector<std::size_t> all(cells);
  for (std::size_t i = 0; i < cells; ++i) all[i] = i;
  // Fisher-Yates prefix.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(cells - i);
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  return all;
}

ImageGrid random_filled(Rng& rng, int grid, std::size_t count) {
  ImageGrid img(static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid), kCellEmpty);
  for (std::size_t pos : distinct_cells(rng, img.size(), count)) {
    img[pos] = cell_code(static_cast<int>(rng.below(kNumColors)),
                         static_cast<int>(rng.below(kNumShapes)));
  }
  return img;
}

ImageGrid single_cell(Rng& rng, int grid, int color, int shape) {
  ImageGrid img(static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid), kCellEmpty);
  img[rng.below(img.size())] = cell_code(color, shape);
  return img;
}

ImageGrid distractor(Rng& rng, int grid) {
  return random_filled(rng, grid, 1 + rng.below(3));
}

Sample make_sample(Rng& rng, TaskKind kind, double bias, int grid) {
  Sample s;
  s.task = kind;
  s.question = {ask_token(kind), tokens::kQuery};
  const std::size_t cells = static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid);

  switch (kind) {
    case TaskKind::SameColor: {
      const int c1 = static_cast<int>(rng.below(kNumColors));
      const int shape1 = static_cast<int>(rng.below(kNumShapes));
      const bool same = rng.bernoulli(bias);
      const int c2 = same ? c1 : (c1 + 1 + static_cast<int>(rng.below(kNumColors - 1))) % kNumColors;
      const int shape2 = static_cast<int>(rng.below(kNumShapes));
      s.images.push_back(single_cell(rng, grid, c1, shape1));
      s.images.push_back(single_cell(rng, grid, c2, shape2));
      s.gold = same ? tokens::kYes : tokens::kNo;
      s.prior = tokens::kYes;
      break;
    }
    case TaskKind::SameShape: {
      const int sh1 = static_cast<int>(rng.below(kNumShapes));
      const int c1 = static_cast<int>(rng.below(kNumColors));
      const bool same = rng.bernoulli(bias);
      const int sh2 = same ? sh1 : (sh1 + 1 + static_cast<int>(rng.below(kNumShapes - 1))) % kNumShapes;
      const int c2 = static_cast<int>(rng.below(kNumColors));
      s.images.push_back(single_cell(rng, grid, c1, sh1));
      s.images.push_back(single_cell(rng, grid, c2, sh2));
      s.gold = same ? tokens::kYes : tokens::kNo;
      s.prior = tokens::kYes;
      break;
    }
    case TaskKind::CountCompare: {
      const bool first_wins = rng.bernoulli(bias);
      const std::size_t hi_span = std::min<std::size_t>(5, cells - 1);
      const std::size_t hi = 2 + rng.below(hi_span);
      const std::size_t lo = 1 + rng.below(hi - 1);
      const std::size_t n1 = first_wins ? hi : lo;
      const std::size_t n2 = first_wins ? lo : hi;
      s.images.push_back(random_filled(rng, grid, n1));
      s.images.push_back(random_filled(rng, grid, n2));
      s.gold = first_wins ? tokens::kFirst : tokens::kSecond;
      s.prior = tokens::kFirst;
      break;
    }
    case TaskKind::DifferenceSpot: {
      const std::size_t m_min = std::min<std::size_t>(3, cells - 1);
      const std::size_t m_max = std::min<std::size_t>(5, cells);
      const std::size_t m = m_min + rng.below(m_max - m_min + 1);
      ImageGrid base(cells, kCellEmpty);
      const auto positions = distinct_cells(rng, cells, m);
      for (std::size_t pos : positions) {
        // Colors 1..5 here; color 0 is the majority answer and must differ
        // from the pre-change color.
        base[pos] = cell_code(1 + static_cast<int>(rng.below(kNumColors - 1)),
                              static_cast<int>(rng.below(kNumShapes)));
      }
      ImageGrid changed = base;
      const std::size_t target = positions[rng.below(positions.size())];
      const int old_color = cell_color(base[target]);
      int new_color;
      if (rng.bernoulli(bias)) {
        new_color = 0;
      } else {
        new_color = 1 + static_cast<int>(rng.below(kNumColors - 2));
        if (new_color >= old_color) ++new_color;
      }
      changed[target] = cell_code(new_color, cell_shape(base[target]));
      s.images.push_back(std::move(base));
      s.images.push_back(std::move(changed));
      s.gold = tokens::color_token(new_color);
      s.prior = tokens::color_token(0);
      break;
    }
  }

  // 2..4 images; extras are distractors with no bearing on the answer.
  const double u = rng.uniform01();
  const int n = u < 0.7 ? 2 : (u < 0.9 ? 3 : 4);
  for (int k = 2; k < n; ++k) s.images.push_back(distractor(rng, grid));
  return s;
}

}  // namespace

std::vector<Sample> generate_dataset(const DatasetParams& params) {
  params.validate();
  std::vector<Sample> out;
  out.reserve(params.size);
  for (std::size_t i = 0; i < params.size; ++i) {
    Rng rng(mix_seed(params.seed, i));
    const TaskKind kind = params.mix[rng.below(params.mix.size())];
    out.push_back(make_sample(rng, kind, params.bias, params.grid));
  }
  return out;
}

namespace {

std::size_t first_filled(const ImageGrid& img) {
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (img[i] != kCellEmpty) return i;
  }
  throw std::invalid_argument("oracle: image has no filled cell");
}

std::size_t count_filled(const ImageGrid& img) {
  return static_cast<std::size_t>(
      std::count_if(img.begin(), img.end(), [](int c) { return c != kCellEmpty; }));
}

}  // namespace

int oracle_answer(const Sample& sample) {
  if (sample.images.size() < 2) throw std::invalid_argument("oracle: sample needs two images");
  const ImageGrid& a = sample.images[0];
  const ImageGrid& b = sample.images[1];
  switch (sample.task) {
    case TaskKind::SameColor:
      return cell_color(a[first_filled(a)]) == cell_color(b[first_filled(b)]) ? tokens::kYes
                                                                              : tokens::kNo;
    case TaskKind::SameShape:
      return cell_shape(a[first_filled(a)]) == cell_shape(b[first_filled(b)]) ? tokens::kYes
                                                                              : tokens::kNo;
    case TaskKind::CountCompare:
      return count_filled(a) >= count_filled(b) ? tokens::kFirst : tokens::kSecond;
    case TaskKind::DifferenceSpot: {
      if (a.size() != b.size()) throw std::invalid_argument("oracle: grid sizes differ");
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return tokens::color_token(cell_color(b[i]));
      }
      throw std::invalid_argument("oracle: difference-spot images are identical");
    }
  }
  throw std::invalid_argument("oracle: unknown task kind");
}

TokenSequence sample_to_sequence(const Sample& sample) {
  std::vector<std::vector<int>> image_blocks;
  image_blocks.reserve(sample.images.size());
  for (const ImageGrid& img : sample.images) image_blocks.push_back(img);
  std::vector<std::vector<int>> text_blocks(sample.images.size());
  text_blocks.back() = sample.question;
  return build_interleaved(image_blocks, text_blocks);
}

EvalReport evaluate(const ModelConfig& cfg, const Parameters& params,
                    const std::vector<Sample>& dataset, const MaskPolicy& policy) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalReport report;
  report.count = dataset.size();
  std::size_t correct = 0, wrong = 0, wrong_prior = 0;
  for (const Sample& sample : dataset) {
    const TokenSequence seq = sample_to_sequence(sample);
    const int pred = generate(seq, cfg, params, policy, 1).front();
    TaskStats& stats = report.by_task[task_kind_name(sample.task)];
    ++stats.count;
    if (pred == sample.gold) {
      ++correct;
      ++stats.correct;
    } else {
      ++wrong;
      if (pred == sample.prior) ++wrong_prior;
    }
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  report.prior_agreement = wrong ? static_cast<double>(wrong_prior) / static_cast<double>(wrong)
                                 : 0.0;
  return report;
}

}  // namespace capl
