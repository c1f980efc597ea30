#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "edgepop/rng.hpp"
#include "edgepop/tensor.hpp"

namespace edgepop {

template <typename T>
struct Dataset {
  Tensor<T> images;  // [N,C,H,W] or [N,D]
  std::vector<int> labels;
  int64_t classes = 0;
  std::string split;                 // "train" | "test"
  std::vector<double> channel_mean;  // normalization applied at load time
  std::vector<double> channel_std;

  int64_t size() const { return images.dim(0); }
};

struct BatchPlan {
  int64_t batch_size = 128;
  RngStream rng;  // shuffle stream; (stream, epoch) fully determines order
  bool drop_last = false;
};

// Per-epoch reshuffled batches; every sample appears exactly once per epoch.
template <typename T>
std::vector<std::vector<int32_t>> batches(const Dataset<T>& ds, const BatchPlan& plan,
                                          int64_t epoch) {
  const int64_t n = ds.size();
  if (plan.batch_size < 1 || plan.batch_size > n) {
    throw ParamError("batch_size " + std::to_string(plan.batch_size) +
                     " out of range for dataset of " + std::to_string(n));
  }
  std::vector<int32_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = static_cast<int32_t>(i);
  RngStream r = plan.rng.fork("epoch" + std::to_string(epoch));
  r.shuffle(order);
  std::vector<std::vector<int32_t>> out;
  for (int64_t start = 0; start < n; start += plan.batch_size) {
    const int64_t end = std::min(n, start + plan.batch_size);
    if (plan.drop_last && end - start < plan.batch_size) break;
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, std::vector<int>> gather(const Dataset<T>& ds,
                                              const std::vector<int32_t>& idx) {
  std::vector<int64_t> shape = ds.images.shape();
  shape[0] = static_cast<int64_t>(idx.size());
  Tensor<T> out{shape};
  const int64_t per = ds.images.numel() / ds.images.dim(0);
  std::vector<int> labels(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    const T* src = ds.images.data() + static_cast<int64_t>(idx[i]) * per;
    T* dst = out.data() + static_cast<int64_t>(i) * per;
    std::copy(src, src + per, dst);
    labels[i] = ds.labels[static_cast<size_t>(idx[i])];
  }
  return {std::move(out), std::move(labels)};
}

// Random horizontal flip (p = 0.5) and a random HxW crop out of 4-pixel zero
// padding. Train split only; off by default.
struct AugmentParams {
  bool flip = false;
  int64_t oy = 4;  // crop offsets in [0, 8]
  int64_t ox = 4;
};

inline AugmentParams draw_augment_params(RngStream& rng) {
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.oy = static_cast<int64_t>(rng.next_below(9));
  p.ox = static_cast<int64_t>(rng.next_below(9));
  return p;
}

template <typename T>
void flip_horizontal(T* img, int64_t C, int64_t H, int64_t W) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t h = 0; h < H; ++h) {
      T* row = img + (c * H + h) * W;
      for (int64_t w = 0; w < W / 2; ++w) std::swap(row[w], row[W - 1 - w]);
    }
}

template <typename T>
void apply_augment(T* img, int64_t C, int64_t H, int64_t W, const AugmentParams& p) {
  constexpr int64_t pad = 4;
  if (p.flip) flip_horizontal(img, C, H, W);
  if (p.oy == pad && p.ox == pad) return;  // centered crop is the identity
  std::vector<T> crop(static_cast<size_t>(C * H * W), T{0});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t h = 0; h < H; ++h) {
      const int64_t src_h = h + p.oy - pad;  // row in the original image
      if (src_h < 0 || src_h >= H) continue;
      for (int64_t w = 0; w < W; ++w) {
        const int64_t src_w = w + p.ox - pad;
        if (src_w < 0 || src_w >= W) continue;
        crop[static_cast<size_t>((c * H + h) * W + w)] = img[(c * H + src_h) * W + src_w];
      }
    }
  std::copy(crop.begin(), crop.end(), img);
}

template <typename T>
void augment_image(T* img, int64_t C, int64_t H, int64_t W, RngStream& rng) {
  apply_augment(img, C, H, W, draw_augment_params(rng));
}

template <typename T>
Tensor<T> augment(const Tensor<T>& image, RngStream& rng) {
  if (image.rank() != 3) throw DimError("augment expects a [C,H,W] image");
  Tensor<T> out = image;
  augment_image(out.data(), out.dim(0), out.dim(1), out.dim(2), rng);
  return out;
}

// Gaussian clusters with class-separated means, split 80/20 per class.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> synth_blobs(int64_t classes, int64_t dim, int64_t per_class,
                                              double spread, const RngStream& rng) {
  if (classes < 2) throw ParamError("synth_blobs needs >= 2 classes");
  if (dim < 1 || per_class < 2) throw ParamError("synth_blobs needs dim >= 1, per_class >= 2");
  RngStream mean_rng = rng.fork("means");
  std::vector<std::vector<double>> means(static_cast<size_t>(classes),
                                         std::vector<double>(static_cast<size_t>(dim)));
  for (auto& m : means)
    for (auto& v : m) v = mean_rng.normal();

  const int64_t train_per = (per_class * 8) / 10;
  const int64_t test_per = per_class - train_per;
  Dataset<T> train{Tensor<T>({classes * train_per, dim}), {}, classes, "train", {}, {}};
  Dataset<T> test{Tensor<T>({classes * test_per, dim}), {}, classes, "test", {}, {}};
  train.labels.resize(static_cast<size_t>(classes * train_per));
  test.labels.resize(static_cast<size_t>(classes * test_per));

  RngStream sample_rng = rng.fork("samples");
  int64_t ti = 0, vi = 0;
  for (int64_t c = 0; c < classes; ++c) {
    RngStream crng = sample_rng.fork("class" + std::to_string(c));
    for (int64_t s = 0; s < per_class; ++s) {
      const bool is_train = s < train_per;
      T* dst = is_train ? train.images.data() + ti * dim : test.images.data() + vi * dim;
      for (int64_t d = 0; d < dim; ++d) {
        dst[d] = static_cast<T>(means[static_cast<size_t>(c)][static_cast<size_t>(d)] +
                                spread * crng.normal());
      }
      if (is_train) {
        train.labels[static_cast<size_t>(ti++)] = static_cast<int>(c);
      } else {
        test.labels[static_cast<size_t>(vi++)] = static_cast<int>(c);
      }
    }
  }
  return {std::move(train), std::move(test)};
}

// --- CIFAR-10 binary release ---

inline constexpr int64_t kCifarRecordBytes = 3073;    // 1 label + 3072 pixels
inline constexpr int64_t kCifarRecordsPerFile = 10000;
inline constexpr int64_t kCifarFileBytes = kCifarRecordBytes * kCifarRecordsPerFile;

struct CifarRecord {
  uint8_t label = 0;
  std::array<uint8_t, 3072> pixels{};  // R plane, G plane, B plane, row-major 32x32
};

inline CifarRecord parse_cifar_record(const uint8_t* bytes) {
  CifarRecord r;
  r.label = bytes[0];
  if (r.label > 9) throw DataError("CIFAR label " + std::to_string(int(r.label)) + " out of [0,9]");
  std::copy(bytes + 1, bytes + kCifarRecordBytes, r.pixels.begin());
  return r;
}

inline std::array<uint8_t, kCifarRecordBytes> serialize_cifar_record(const CifarRecord& r) {
  std::array<uint8_t, kCifarRecordBytes> out{};
  out[0] = r.label;
  std::copy(r.pixels.begin(), r.pixels.end(), out.begin() + 1);
  return out;
}

inline std::vector<CifarRecord> read_cifar_file(const std::filesystem::path& path) {
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec) throw FormatError("cannot stat " + path.string() + ": " + ec.message());
  if (static_cast<int64_t>(actual) != kCifarFileBytes) {
    throw FormatError(path.string() + ": expected " + std::to_string(kCifarFileBytes) +
                      " bytes, got " + std::to_string(actual));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<uint8_t> buf(static_cast<size_t>(kCifarFileBytes));
  in.read(reinterpret_cast<char*>(buf.data()), kCifarFileBytes);
  if (!in) throw FormatError("short read on " + path.string());
  std::vector<CifarRecord> records;
  records.reserve(static_cast<size_t>(kCifarRecordsPerFile));
  for (int64_t i = 0; i < kCifarRecordsPerFile; ++i) {
    records.push_back(parse_cifar_record(buf.data() + i * kCifarRecordBytes));
  }
  return records;
}

// Assembles datasets from parsed records: pixels scaled to [0,1], then
// channel-normalized with statistics computed from the training records.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> cifar_from_records(const std::vector<CifarRecord>& train_recs,
                                                     const std::vector<CifarRecord>& test_recs) {
  // Per-channel mean/std of the training split in [0,1] scale.
  std::array<double, 3> mean{}, sq{};
  for (const auto& r : train_recs) {
    for (int c = 0; c < 3; ++c) {
      for (int p = 0; p < 1024; ++p) {
        const double v = r.pixels[static_cast<size_t>(c * 1024 + p)] / 255.0;
        mean[static_cast<size_t>(c)] += v;
        sq[static_cast<size_t>(c)] += v * v;
      }
    }
  }
  const double cnt = static_cast<double>(train_recs.size()) * 1024.0;
  std::array<double, 3> sd{};
  for (int c = 0; c < 3; ++c) {
    mean[static_cast<size_t>(c)] /= cnt;
    sd[static_cast<size_t>(c)] =
        std::sqrt(sq[static_cast<size_t>(c)] / cnt -
                  mean[static_cast<size_t>(c)] * mean[static_cast<size_t>(c)]);
  }

  auto to_dataset = [&](const std::vector<CifarRecord>& recs, const char* split) {
    Dataset<T> ds;
    const int64_t n = static_cast<int64_t>(recs.size());
    ds.images = Tensor<T>({n, 3, 32, 32});
    ds.labels.resize(static_cast<size_t>(n));
    ds.classes = 10;
    ds.split = split;
    ds.channel_mean = {mean[0], mean[1], mean[2]};
    ds.channel_std = {sd[0], sd[1], sd[2]};
    for (int64_t i = 0; i < n; ++i) {
      const auto& r = recs[static_cast<size_t>(i)];
      ds.labels[static_cast<size_t>(i)] = r.label;
      T* dst = ds.images.data() + i * 3072;
      for (int c = 0; c < 3; ++c) {
        for (int p = 0; p < 1024; ++p) {
          const double v = r.pixels[static_cast<size_t>(c * 1024 + p)] / 255.0;
          dst[c * 1024 + p] =
              static_cast<T>((v - mean[static_cast<size_t>(c)]) / sd[static_cast<size_t>(c)]);
        }
      }
    }
    return ds;
  };

  return {to_dataset(train_recs, "train"), to_dataset(test_recs, "test")};
}

// Loads the binary release: data_batch_1..5.bin + test_batch.bin.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> load_cifar10(const std::filesystem::path& dir) {
  std::vector<CifarRecord> train_recs;
  for (int i = 1; i <= 5; ++i) {
    auto recs = read_cifar_file(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    train_recs.insert(train_recs.end(), recs.begin(), recs.end());
  }
  std::vector<CifarRecord> test_recs = read_cifar_file(dir / "test_batch.bin");
  return cifar_from_records<T>(train_recs, test_recs);
}

}  // namespace edgepop
