#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "edgepop/init.hpp"
#include "edgepop/model.hpp"
#include "edgepop/optim.hpp"

namespace edgepop {

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool cosine = true;  // per-epoch cosine decay; Adam defaults to constant lr
};

struct DatasetConfig {
  std::string kind = "blobs";  // blobs | cifar10
  std::string data_dir;        // falls back to EDGEPOP_DATA_DIR
  int64_t batch_size = 128;
  bool augment = false;
  int64_t blob_classes = 10;
  int64_t blob_dim = 64;
  int64_t blob_per_class = 200;
  double blob_spread = 1.0;
};

struct SweepConfig {
  std::string axis;  // k | width | fixed_params | init | algorithm | seed
  std::vector<std::string> values;
  int64_t seeds_per_point = 1;
  double dense_lr = 0.01;  // dense baseline recipe for the width axis
};

// Complete, serializable description of one run. A run is a pure function of
// this structure plus the dataset bytes.
struct TrainConfig {
  Algorithm algorithm = Algorithm::EdgePopup;
  ArchSpec arch;
  InitSpec init;
  double k = 0.5;
  bool score_abs_clamp = false;
  OptimizerConfig optimizer;
  int64_t epochs = 100;
  uint64_t seed = 1;
  DatasetConfig dataset;
  std::string out_dir = "runs/out";
  SweepConfig sweep;
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::filesystem::path& path);
std::string serialize_config(const TrainConfig& cfg);
uint64_t config_hash(const TrainConfig& cfg);

// dataset.data_dir, then EDGEPOP_DATA_DIR.
std::string resolve_data_dir(const DatasetConfig& ds);

}  // namespace edgepop
