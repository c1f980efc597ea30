#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "edgepop/checkpoint.hpp"
#include "edgepop/config.hpp"
#include "edgepop/data.hpp"
#include "edgepop/model.hpp"

namespace edgepop {

struct EpochRow {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;
  std::vector<int64_t> swaps;  // per selectable layer, summed over the epoch's steps
};

struct RunOptions {
  bool write_artifacts = true;  // metrics.csv and checkpoint.bin under out_dir
  bool verbose = true;
  bool count_swaps = true;
};

struct RunResult {
  std::vector<EpochRow> rows;
  double final_test_acc = 0.0;
  double final_test_loss = 0.0;
  int64_t subnet_size = 0;
  int64_t total_weights = 0;
  double wall_seconds = 0.0;
  Model<float> model;
  std::vector<std::string> swap_columns;
};

// Dataset pair per the config ([dataset] block). Blobs are a fixed function
// of their parameters so seed sweeps rerun the same task.
std::pair<Dataset<float>, Dataset<float>> load_datasets(const TrainConfig& cfg);

std::vector<int64_t> model_input_shape(const TrainConfig& cfg);

Model<float> build_model_for(const TrainConfig& cfg);

// Executes one full run: training loop, per-epoch metrics, weight-freeze
// assertion, final checkpoint.
RunResult run_training(const TrainConfig& cfg, const RunOptions& opt = {});

// Rebuilds the model recorded in a checkpoint and restores its tensors.
Model<float> model_from_checkpoint(const Checkpoint& ck, TrainConfig* cfg_out = nullptr);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  int64_t subnet_size = 0;
  double k = 1.0;
};

EvalResult run_eval(const std::filesystem::path& checkpoint_path);

// ---- sweeps ----

struct SweepPointResult {
  std::string axis;
  std::string value;
  double k_used = 0.0;
  int64_t n_seeds = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  double loss_mean = 0.0, loss_std = 0.0;
  int64_t subnet_size = 0;
  double dense_acc_mean = 0.0, dense_acc_std = 0.0;  // width axis only
  bool has_dense = false;
  std::string status = "ok";  // "skipped: ..." for infeasible fixed-|E| points
};

// Per-layer weight tensor sizes for an architecture, without building it.
std::vector<int64_t> layer_weight_counts(const ArchSpec& arch,
                                         const std::vector<int64_t>& input_shape);

// Smallest k whose total keep count equals target, if one exists.
std::optional<double> solve_k_for_subnet_size(const std::vector<int64_t>& layer_sizes,
                                              int64_t target);

std::vector<SweepPointResult> run_sweep(const TrainConfig& base, int64_t workers);

void write_sweep_csv(const std::vector<SweepPointResult>& points,
                     const std::filesystem::path& path);

}  // namespace edgepop
