#include "edgepop/train.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "edgepop/verify.hpp"

namespace edgepop {

namespace {

constexpr uint64_t kBlobDataSeed = 0xb10b5eedull;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// Walks the forward pass layer by layer and names the first non-finite
// output; used for the NaN-loss diagnostic.
std::string first_nonfinite_layer(Model<float>& model, const Tensor<float>& x) {
  Tensor<float> h = x;
  for (auto* layer : model.layers()) {
    h = layer->forward(h, true);
    if (!h.all_finite()) return layer->name();
  }
  return "loss";
}

}  // namespace

std::vector<int64_t> model_input_shape(const TrainConfig& cfg) {
  if (cfg.dataset.kind == "cifar10") return {3, 32, 32};
  return {cfg.dataset.blob_dim};
}

std::pair<Dataset<float>, Dataset<float>> load_datasets(const TrainConfig& cfg) {
  if (cfg.dataset.kind == "cifar10") {
    const std::string dir = resolve_data_dir(cfg.dataset);
    if (dir.empty()) {
      throw ConfigError("cifar10 needs dataset.data_dir or EDGEPOP_DATA_DIR");
    }
    auto pair = load_cifar10<float>(dir);
    if (pair.first.classes != cfg.arch.classes) {
      throw ConfigError("arch.classes must be 10 for cifar10");
    }
    return pair;
  }
  if (cfg.dataset.blob_classes != cfg.arch.classes) {
    throw ConfigError("arch.classes (" + std::to_string(cfg.arch.classes) +
                      ") must match dataset.blob_classes (" +
                      std::to_string(cfg.dataset.blob_classes) + ")");
  }
  RngStream data_rng(kBlobDataSeed);
  return synth_blobs<float>(cfg.dataset.blob_classes, cfg.dataset.blob_dim,
                            cfg.dataset.blob_per_class, cfg.dataset.blob_spread,
                            data_rng.fork("blobs"));
}

Model<float> build_model_for(const TrainConfig& cfg) {
  RngStream root(cfg.seed);
  RngStream model_rng = root.fork("model");
  InitSpec init = cfg.init;
  if (init.scaled) init.k = cfg.k;
  return build_model<float>(cfg.arch, cfg.k, init, cfg.algorithm, model_input_shape(cfg),
                            model_rng);
}

namespace {

void save_checkpoint_for(const TrainConfig& cfg, Model<float>& model,
                         Optimizer<float>& optimizer, int64_t epoch,
                         const std::filesystem::path& path) {
  Checkpoint ck;
  ck.config_hash = config_hash(cfg);
  ck.seed = cfg.seed;
  ck.epoch = epoch;
  ck.config_text = serialize_config(cfg);
  for (auto* l : model.selectable()) {
    ck.add(l->name() + "/weights", l->weights());
    if (!is_dense(cfg.algorithm)) {
      const char* sel = cfg.algorithm == Algorithm::Zhou ? "/logits" : "/scores";
      ck.add(l->name() + sel, l->selector());
      ck.add(l->name() + "/mask", l->current_mask());
    }
  }
  const auto& slots = optimizer.slots();
  if (optimizer.kind() == OptimizerKind::Sgd) {
    auto& vel = optimizer.velocities();
    for (size_t i = 0; i < slots.size(); ++i) {
      if (vel[i].numel() > 0) ck.add("opt/" + slots[i].name + "/velocity", vel[i]);
    }
  } else {
    auto& st = optimizer.adam_states();
    for (size_t i = 0; i < slots.size(); ++i) {
      if (st[i].m.numel() == 0) continue;
      ck.add("opt/" + slots[i].name + "/m", st[i].m);
      ck.add("opt/" + slots[i].name + "/v", st[i].v);
      Tensor<float> step({1}, static_cast<float>(st[i].step));
      ck.add("opt/" + slots[i].name + "/step", step);
    }
  }
  ck.save(path);
}

}  // namespace

RunResult run_training(const TrainConfig& cfg, const RunOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  auto [train, test] = load_datasets(cfg);
  if (cfg.dataset.batch_size > train.size()) {
    throw ConfigError("batch_size " + std::to_string(cfg.dataset.batch_size) +
                      " exceeds training set size " + std::to_string(train.size()));
  }

  RunResult result;
  result.model = build_model_for(cfg);
  Model<float>& model = result.model;
  result.total_weights = model.total_weights();

  RngStream root(cfg.seed);
  BatchPlan plan{cfg.dataset.batch_size, root.fork("shuffle"), false};
  RngStream augment_root = root.fork("augment");

  const bool frozen_weights = !is_dense(cfg.algorithm);
  const auto init_hashes = model.weight_hashes();

  auto slots = model.trainable_slots();
  const OptimizerKind okind = cfg.algorithm == Algorithm::DenseAdam   ? OptimizerKind::Adam
                              : cfg.algorithm == Algorithm::DenseSgd ? OptimizerKind::Sgd
                                                                     : cfg.optimizer.kind;
  // Adam runs at constant learning rate; cosine decay applies to SGD only.
  const bool use_cosine = cfg.optimizer.cosine && okind == OptimizerKind::Sgd;
  Optimizer<float> optimizer(
      okind, SgdOptions{cfg.optimizer.lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay},
      AdamOptions{cfg.optimizer.lr, 0.9, 0.999, 1e-8}, std::move(slots));

  auto selectable = model.selectable();
  for (auto* l : selectable) result.swap_columns.push_back(l->name());
  std::vector<Tensor<float>> prev_masks;
  if (opt.count_swaps && frozen_weights) {
    for (auto* l : selectable) prev_masks.push_back(l->current_mask());
  }

  std::ofstream metrics;
  if (opt.write_artifacts) {
    std::filesystem::create_directories(cfg.out_dir);
    metrics.open(std::filesystem::path(cfg.out_dir) / "metrics.csv", std::ios::trunc);
    if (!metrics) throw FormatError("cannot write metrics.csv under " + cfg.out_dir);
    metrics << "epoch,train_loss,train_acc,test_loss,test_acc,lr";
    if (frozen_weights && opt.count_swaps) {
      for (const auto& name : result.swap_columns) metrics << ",swaps_" << name;
    }
    metrics << "\n";
  }

  const bool abs_clamp = cfg.score_abs_clamp && cfg.algorithm == Algorithm::EdgePopup;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        use_cosine ? cosine_lr(epoch, cfg.epochs, cfg.optimizer.lr) : cfg.optimizer.lr;
    optimizer.set_lr(lr);
    RngStream aug_rng = augment_root.fork("epoch" + std::to_string(epoch));

    double loss_sum = 0.0;
    int64_t correct = 0, seen = 0, step = 0;
    std::vector<int64_t> swaps(selectable.size(), 0);

    for (const auto& batch : batches(train, plan, epoch)) {
      auto [x, y] = gather(train, batch);
      if (cfg.dataset.augment && x.rank() == 4) {
        const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
        for (int64_t i = 0; i < x.dim(0); ++i) {
          augment_image(x.data() + i * C * H * W, C, H, W, aug_rng);
        }
      }
      Tensor<float> logits = model.forward(x, true);
      auto xent = kernels::softmax_xent(logits, y);
      if (!std::isfinite(xent.loss)) {
        throw DataError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                        std::to_string(step) + " (lr " + fmt(lr) + ", first bad layer: " +
                        first_nonfinite_layer(model, x) + ")");
      }
      const int64_t bsz = logits.dim(0);
      loss_sum += static_cast<double>(xent.loss) * static_cast<double>(bsz);
      const int64_t K = logits.dim(1);
      for (int64_t i = 0; i < bsz; ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < K; ++j)
          if (logits[i * K + j] > logits[i * K + best]) best = j;
        correct += best == y[static_cast<size_t>(i)] ? 1 : 0;
      }
      seen += bsz;

      model.zero_grad();
      model.backward(kernels::softmax_xent_backward(xent.probs, y));
      optimizer.step();
      if (abs_clamp) {
        for (auto* l : selectable) {
          Tensor<float>& s = l->selector();
          for (int64_t i = 0; i < s.numel(); ++i) s[i] = std::abs(s[i]);
        }
      }

      if (opt.count_swaps && frozen_weights) {
        for (size_t li = 0; li < selectable.size(); ++li) {
          Tensor<float> cur = selectable[li]->current_mask();
          if (auto ev = detect_swaps(prev_masks[li], cur, selectable[li]->name())) {
            swaps[li] += static_cast<int64_t>(ev->entered.size());
          }
          prev_masks[li] = std::move(cur);
        }
      }
      ++step;
    }

    if (frozen_weights) {
      const auto now = model.weight_hashes();
      for (size_t i = 0; i < now.size(); ++i) {
        if (now[i].second != init_hashes[i].second) {
          throw DataError("frozen weight tensor '" + now[i].first + "' changed during epoch " +
                          std::to_string(epoch));
        }
      }
    }

    auto [test_loss, test_acc] = evaluate_dataset(model, test);
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    row.test_loss = test_loss;
    row.test_acc = test_acc;
    row.lr = lr;
    row.swaps = swaps;
    result.rows.push_back(row);

    if (opt.write_artifacts) {
      metrics << row.epoch << ',' << fmt(row.train_loss) << ',' << fmt(row.train_acc) << ','
              << fmt(row.test_loss) << ',' << fmt(row.test_acc) << ',' << fmt(row.lr);
      if (frozen_weights && opt.count_swaps) {
        for (int64_t s : row.swaps) metrics << ',' << s;
      }
      metrics << '\n';
      metrics.flush();
    }
    if (opt.verbose) {
      std::printf("epoch %3" PRId64 "  train_loss %.4f  train_acc %.4f  test_acc %.4f  lr %.5f\n",
                  row.epoch, row.train_loss, row.train_acc, row.test_acc, row.lr);
      std::fflush(stdout);
    }
  }

  result.final_test_acc = result.rows.back().test_acc;
  result.final_test_loss = result.rows.back().test_loss;
  result.subnet_size = model.subnet_size();
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (opt.write_artifacts) {
    save_checkpoint_for(cfg, model, optimizer, cfg.epochs,
                        std::filesystem::path(cfg.out_dir) / "checkpoint.bin");
  }
  if (opt.verbose) {
    std::printf("done: test_acc %.4f  |E| %" PRId64 "/%" PRId64 "  wall %.1fs\n",
                result.final_test_acc, result.subnet_size, result.total_weights,
                result.wall_seconds);
  }
  return result;
}

Model<float> model_from_checkpoint(const Checkpoint& ck, TrainConfig* cfg_out) {
  TrainConfig cfg = parse_config_text(ck.config_text);
  Model<float> model = build_model_for(cfg);
  for (auto* l : model.selectable()) {
    l->weights() = ck.tensor<float>(l->name() + "/weights");
    if (!is_dense(cfg.algorithm)) {
      const char* sel = cfg.algorithm == Algorithm::Zhou ? "/logits" : "/scores";
      l->selector() = ck.tensor<float>(l->name() + sel);
    }
  }
  if (cfg_out) *cfg_out = cfg;
  return model;
}

EvalResult run_eval(const std::filesystem::path& checkpoint_path) {
  Checkpoint ck = Checkpoint::load(checkpoint_path);
  TrainConfig cfg;
  Model<float> model = model_from_checkpoint(ck, &cfg);
  auto [train, test] = load_datasets(cfg);
  (void)train;
  auto [loss, acc] = evaluate_dataset(model, test);
  EvalResult r;
  r.accuracy = acc;
  r.loss = loss;
  r.subnet_size = model.subnet_size();
  r.k = cfg.k;
  return r;
}

}  // namespace edgepop
