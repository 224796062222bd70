#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "milens/encoders.hpp"
#include "milens/rng.hpp"
#include "milens/tensor.hpp"

namespace milens {

enum class DatasetKind { kMnist, kCifar10 };
enum class Split { kTrain, kTest };

DatasetKind dataset_from_string(const std::string& s);
std::string to_string(DatasetKind kind);
std::string to_string(Split split);

// Raw images scaled to [0, 1], stored [n, channels, rows, cols] row-major.
struct RawImages {
  int64_t count = 0;
  int64_t channels = 1;
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> pixels;
  std::vector<int> labels;
};

struct RawDataset {
  RawImages train;
  RawImages test;
};

// MNIST IDX pair (train/t10k images + labels), big-endian magics 2051/2049.
RawDataset load_mnist(const std::string& dir);

// CIFAR-10 binary batches: data_batch_1..5.bin + test_batch.bin, 3073-byte
// records (1 label byte + 3072 RGB-planar pixel bytes).
RawDataset load_cifar10(const std::string& dir);

struct NoiseSpec {
  bool enabled = false;
  double sigma = 0.05;
  bool coupled = true;
  bool fixed_per_image = false;
};

// Two aligned views per image (top/bottom halves), clean pixels in [0, 1].
// Noise, when enabled, is applied at materialization time so each visit can
// re-draw it.
class ViewPairDataset {
 public:
  ViewPairDataset(RawDataset raw, DatasetKind kind, NoiseSpec noise, uint64_t seed);

  DatasetKind kind() const { return kind_; }
  const NoiseSpec& noise() const { return noise_; }
  uint64_t seed() const { return seed_; }
  int64_t count(Split split) const;
  int64_t dim1() const { return d1_; }
  int64_t dim2() const { return d2_; }
  ViewGeometry view1_geometry() const { return geo1_; }
  const std::vector<int>& labels(Split split) const;

  // Clean views (no noise), one row per image.
  const std::vector<double>& view1(Split split) const;
  const std::vector<double>& view2(Split split) const;

  // Copies rows `indices` of both views into out1/out2 and adds the noise
  // draw for (epoch, image). Coupled noise adds the same vector to both
  // views of an image; with fixed_per_image the draw ignores the epoch.
  void gather(Split split, const std::vector<int64_t>& indices, uint64_t epoch, double* out1,
              double* out2, int* labels_out) const;

  // Full split with a fresh noise draw under the given stream tag
  // (deterministic per (seed, tag)); used by probes and diagnostics.
  void materialize(Split split, uint64_t stream_tag, std::vector<double>& out1,
                   std::vector<double>& out2) const;

 private:
  void add_noise(int64_t image_index, uint64_t epoch, double* row1, double* row2) const;

  DatasetKind kind_;
  NoiseSpec noise_;
  uint64_t seed_;
  int64_t d1_ = 0, d2_ = 0;
  ViewGeometry geo1_;
  std::vector<double> train1_, train2_, test1_, test2_;
  std::vector<int> train_labels_, test_labels_;
};

ViewPairDataset load_view_pairs(DatasetKind kind, const std::string& dir, NoiseSpec noise,
                                uint64_t seed);

struct Batch {
  int64_t size = 0;
  Tensor view1;  // [K, d1]
  Tensor view2;  // [K, d2]
  std::vector<int> labels;
};

// Seeded epoch iterator: Fisher-Yates shuffle per epoch, aligned pairs,
// partial final batch dropped.
class BatchIterator {
 public:
  BatchIterator(const ViewPairDataset& dataset, Split split, int64_t batch_size, uint64_t seed);

  // Fills the next batch, advancing epochs as needed. Always succeeds.
  void next(Batch& batch);

  int64_t epoch() const { return epoch_; }
  int64_t batches_per_epoch() const { return count_ / batch_size_; }

 private:
  void start_epoch();

  const ViewPairDataset& dataset_;
  Split split_;
  int64_t batch_size_;
  uint64_t seed_;
  int64_t count_;
  int64_t epoch_ = -1;
  int64_t cursor_ = 0;
  std::vector<int64_t> order_;
};

}  // namespace milens
