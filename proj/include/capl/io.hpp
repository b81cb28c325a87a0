#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "capl/masks.hpp"
#include "capl/model.hpp"
#include "capl/prefgen.hpp"
#include "capl/synthbench.hpp"
#include "capl/training.hpp"

namespace capl {

// Usage / configuration problems (CLI exit code 1), as opposed to runtime
// and data errors (exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key=value run configuration: model + training + dataset settings.
// File values are overridden by command-line flags; the effective config is
// echoed into every output artifact.
struct RunConfig {
  // model
  int layers{4};
  int heads{2};
  int d_model{32};
  int vocab{64};
  int grid{3};
  int patch{1};
  int max_seq{64};
  std::string mask_policy{"alternating"};
  double rho{0.95};
  std::string intensity_source{"encoder"};
  // training
  double beta{0.1};
  double lambda{2.5};
  double lr{1e-4};
  int epochs{30};
  int batch{16};
  std::string objective{"capl"};
  bool nll_normalize{false};
  std::string optimizer{"adam"};
  // data
  std::size_t data_size{2000};
  double data_bias{0.8};
  std::string tasks{"same-color,same-shape,count-compare,difference-spot"};
  std::size_t eval_size{500};
  // master seed; per-stage seeds are derived from it
  std::uint64_t seed{0};

  static RunConfig from_file(const std::string& path);
  void apply_override(const std::string& key, const std::string& value);
  void validate() const;

  std::string echo() const;  // canonical flat text, sorted by key
  nlohmann::ordered_json echo_json() const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  DatasetParams dataset_params() const;       // training split
  DatasetParams eval_dataset_params() const;  // held-out split

  std::uint64_t data_seed() const { return mix_seed(seed, 1); }
  std::uint64_t eval_seed() const { return mix_seed(seed, 2); }
  std::uint64_t init_seed() const { return mix_seed(seed, 3); }
  std::uint64_t train_seed() const { return mix_seed(seed, 4); }
};

// ---- line-delimited artifacts -------------------------------------------

struct DatasetFile {
  nlohmann::ordered_json header;
  std::vector<Sample> samples;
};

void write_dataset(const std::string& path, const DatasetFile& file);
DatasetFile read_dataset(const std::string& path);

struct PairsFile {
  nlohmann::ordered_json header;
  std::vector<PreferencePair> pairs;
  std::size_t discarded{0};
};

void write_pairs(const std::string& path, const PairsFile& file);
PairsFile read_pairs(const std::string& path);

void write_metrics(const std::string& path, const std::vector<EpochMetrics>& metrics,
                   const RunConfig& config);

void write_eval_report(const std::string& path, const EvalReport& report,
                       const RunConfig& config, const std::string& mask_mode);
nlohmann::ordered_json eval_report_json(const EvalReport& report);

// ---- checkpoint -----------------------------------------------------------

struct Checkpoint {
  std::string config_echo;  // flat text as written
  ModelConfig model;
  Parameters params;
};

void save_checkpoint(const std::string& path, const RunConfig& config, const Parameters& params);
Checkpoint load_checkpoint(const std::string& path);

// ---- mask dumps -----------------------------------------------------------

void write_mask_dump(const std::string& path, const AttentionMask& mask,
                     const std::string& kind_name);
AttentionMask read_mask_dump(const std::string& path, std::string* kind_name = nullptr);

// ---- small file helpers ----------------------------------------------------

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace capl
