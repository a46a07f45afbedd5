#pragma once

#include <string>
#include <vector>

#include "fgb/boosting.hpp"
#include "fgb/dataset.hpp"

namespace fgb::harness {

enum class Variant {
  SingleModel,
  EEnsemble,
  SubgridEEnsemble,
  Boost,
  SubgridBoost,
  SubsequenceBoost,
  ImportanceSamplingBoost,
  SubsequenceImportanceSamplingBoost,
  SubsequenceBaseline,
};

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ExperimentConfig {
  Variant variant = Variant::Boost;
  int rounds = 5;        // total learners including the basic one
  double nu = 0.1;       // shrinkage on additive rounds
  double sigma = 0.8;    // sample / vocabulary keep fraction
  double rho = 0.75;     // per-axis pixel keep fraction (images)
  int epochs = 15;       // per round
  double lr = 1.5e-3;
  double weight_decay = 1e-4;
  bool decoupled = false;  // AdamW weight decay
  int batch_size = 64;
  uint64_t seed = 0;
  std::string risk = "exponential-pairwise";
  std::string train_path;
  std::string test_path;
  std::string metrics_path;
  std::string checkpoint_dir;
  double alpha_max = 4.0;
  double line_search_tol = 1e-4;
  int tf_layers = 2;
  int tf_heads = 2;
  int tf_width = 32;
  int tf_ffn = 64;
  double warmup_ratio = 0.06;  // transformer rounds only; < 0 disables

  void validate() const;
};

// Parses a flat key = value config file; '#' starts a comment. A `profile`
// key applies a named preset first, explicit keys override it. Unknown keys
// are errors.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);
void apply_profile(ExperimentConfig& cfg, const std::string& name);

struct RoundMetrics {
  int round = 0;
  double alpha = 0.0;
  double train_risk = 0.0;
  double test_accuracy = 0.0;
  double feature_fraction = 1.0;
  double wall_time_s = 0.0;  // cumulative
  double jensen_gap_uniform = 0.0;
  double variance_pstar = 0.0;
  double variance_uniform = 0.0;
};

// ---- dataset files ----

// BKIM container: magic "BKIM", u16 version, u32 sample count, u16 C/H/W,
// u16 class count, little-endian; then per-sample [C,H,W] row-major float32
// pixels, then u16 labels (1-based on disk).
void save_image_dataset(const LabeledDataset& data, const std::string& path);
LabeledDataset load_image_dataset(const std::string& path);

// Newline-delimited JSON records {"tokens": [...], "label": 1-based}. The
// classification token is prepended when absent.
void save_sequence_dataset(const LabeledDataset& data, const std::string& path);
LabeledDataset load_sequence_dataset(const std::string& path);

// ---- synthetic generators ----

struct PlantedRowsParams {
  int train_n = 600;
  int test_n = 300;
  int height = 8;
  int width = 8;
  int channels = 1;
  int classes = 3;
  int signal_rows = 3;
  double amplitude = 1.2;
  double noise = 1.0;
};

struct PlantedRowsData {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<int> signal_rows;  // sorted
};

// Images whose label signal lives only in a known row subset: class-specific
// column blobs on the signal rows, i.i.d. noise everywhere. Pixel values are
// quantized to float32 so container round-trips are value-exact.
PlantedRowsData generate_planted_rows(const PlantedRowsParams& params,
                                      uint64_t seed);

struct PlantedTokensParams {
  int train_n = 400;
  int test_n = 200;
  int vocab = 200;  // content ids 1..vocab; 0 is the classification token
  int classes = 2;
  int planted_per_class = 4;
  int len_min = 12;
  int len_max = 32;
  double signal_prob = 0.15;
};

struct PlantedTokensData {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<std::vector<int>> planted;  // per class, sorted
};

// Sequences where a class-indicative token set is planted among uniform
// distractors. Every content id occurs at least once in the training set so
// the initial vocabulary size equals the vocab parameter.
PlantedTokensData generate_planted_tokens(const PlantedTokensParams& params,
                                          uint64_t seed);

// ---- experiment execution ----

struct ExperimentResult {
  std::vector<RoundMetrics> metrics;
  boosting::Ensemble ensemble;
};

// Raised when a round fails mid-run; carries the rows of every completed
// round so callers can flush partial metrics.
class RunAborted : public Error {
 public:
  RunAborted(const std::string& msg, int round, std::vector<RoundMetrics> done)
      : Error(msg), round_(round), completed_(std::move(done)) {}
  int round() const { return round_; }
  const std::vector<RoundMetrics>& completed() const { return completed_; }

 private:
  int round_;
  std::vector<RoundMetrics> completed_;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const LabeledDataset& train,
                                const LabeledDataset& test);
// Loads the datasets from the configured paths first.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// ---- metrics & checkpoints ----

std::string metrics_to_csv(const std::vector<RoundMetrics>& series);
void write_metrics_csv(const std::vector<RoundMetrics>& series,
                       const std::string& path);

// Ensemble checkpoint: manifest.json plus one parameter checkpoint per round
// in a directory.
void save_ensemble(const boosting::Ensemble& ensemble, const std::string& dir);
boosting::Ensemble load_ensemble(const std::string& dir);
std::string describe_ensemble(const std::string& dir);

}  // namespace fgb::harness
