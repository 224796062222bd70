#include "milens/datasets.hpp"

#include <cstring>
#include <fstream>

#include "milens/error.hpp"

namespace milens {

DatasetKind dataset_from_string(const std::string& s) {
  if (s == "mnist") return DatasetKind::kMnist;
  if (s == "cifar10") return DatasetKind::kCifar10;
  throw ConfigError("dataset.kind: unknown dataset '" + s + "' (expected mnist|cifar10)");
}

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::kMnist ? "mnist" : "cifar10";
}

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

namespace {

uint32_t read_be32(std::istream& in, const std::string& file) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError(file + ": truncated header");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

RawImages load_idx_pair(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError(images_path + ": cannot open");
  const uint32_t img_magic = read_be32(img, images_path);
  if (img_magic != 2051)
    throw DataError(images_path + ": bad magic " + std::to_string(img_magic) + " (expected 2051)");
  const uint32_t n = read_be32(img, images_path);
  const uint32_t rows = read_be32(img, images_path);
  const uint32_t cols = read_be32(img, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError(labels_path + ": cannot open");
  const uint32_t lab_magic = read_be32(lab, labels_path);
  if (lab_magic != 2049)
    throw DataError(labels_path + ": bad magic " + std::to_string(lab_magic) + " (expected 2049)");
  const uint32_t n_labels = read_be32(lab, labels_path);
  if (n != n_labels)
    throw DataError(images_path + ": image count " + std::to_string(n) + " != label count " +
                    std::to_string(n_labels));

  RawImages out;
  out.count = n;
  out.channels = 1;
  out.rows = rows;
  out.cols = cols;
  const size_t pixels_per_image = static_cast<size_t>(rows) * cols;
  std::vector<unsigned char> buf(pixels_per_image);
  out.pixels.resize(static_cast<size_t>(n) * pixels_per_image);
  out.labels.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!img) throw DataError(images_path + ": truncated at image " + std::to_string(i));
    double* dst = &out.pixels[static_cast<size_t>(i) * pixels_per_image];
    for (size_t p = 0; p < pixels_per_image; ++p) dst[p] = buf[p] / 255.0;
    char l;
    lab.read(&l, 1);
    if (!lab) throw DataError(labels_path + ": truncated at label " + std::to_string(i));
    const int label = static_cast<unsigned char>(l);
    if (label > 9) throw DataError(labels_path + ": label " + std::to_string(label) + " out of range");
    out.labels[i] = label;
  }
  return out;
}

RawImages load_cifar_files(const std::vector<std::string>& paths) {
  constexpr int64_t kRecord = 3073;
  constexpr size_t kPixels = 3072;
  RawImages out;
  out.channels = 3;
  out.rows = 32;
  out.cols = 32;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    in.seekg(0, std::ios::end);
    const int64_t size = in.tellg();
    in.seekg(0);
    if (size <= 0 || size % kRecord != 0)
      throw DataError(path + ": size " + std::to_string(size) +
                      " is not a multiple of the 3073-byte record");
    const int64_t n = size / kRecord;
    std::vector<unsigned char> rec(kRecord);
    for (int64_t i = 0; i < n; ++i) {
      in.read(reinterpret_cast<char*>(rec.data()), kRecord);
      if (!in) throw DataError(path + ": truncated at record " + std::to_string(i));
      const int label = rec[0];
      if (label > 9) throw DataError(path + ": label " + std::to_string(label) + " out of range");
      out.labels.push_back(label);
      const size_t base = out.pixels.size();
      out.pixels.resize(base + kPixels);
      for (size_t p = 0; p < kPixels; ++p) out.pixels[base + p] = rec[1 + p] / 255.0;
    }
    out.count += n;
  }
  return out;
}

}  // namespace

RawDataset load_mnist(const std::string& dir) {
  RawDataset ds;
  ds.train = load_idx_pair(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
  ds.test = load_idx_pair(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
  return ds;
}

RawDataset load_cifar10(const std::string& dir) {
  RawDataset ds;
  std::vector<std::string> train_files;
  for (int i = 1; i <= 5; ++i) train_files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  ds.train = load_cifar_files(train_files);
  ds.test = load_cifar_files({dir + "/test_batch.bin"});
  return ds;
}

// ---- view construction ----------------------------------------------------

namespace {

// Copies `half_rows` rows starting at `row0` of every channel, flattened
// [channels, half_rows, cols] row-major.
void cut_rows(const RawImages& raw, int64_t row0, int64_t half_rows, std::vector<double>& out) {
  const int64_t per_view = raw.channels * half_rows * raw.cols;
  out.resize(static_cast<size_t>(raw.count * per_view));
  for (int64_t i = 0; i < raw.count; ++i) {
    const double* src = &raw.pixels[static_cast<size_t>(i * raw.channels * raw.rows * raw.cols)];
    double* dst = &out[static_cast<size_t>(i * per_view)];
    for (int64_t c = 0; c < raw.channels; ++c)
      std::memcpy(dst + c * half_rows * raw.cols, src + (c * raw.rows + row0) * raw.cols,
                  static_cast<size_t>(half_rows * raw.cols) * sizeof(double));
  }
}

}  // namespace

ViewPairDataset::ViewPairDataset(RawDataset raw, DatasetKind kind, NoiseSpec noise, uint64_t seed)
    : kind_(kind), noise_(noise), seed_(seed) {
  if (noise.sigma < 0.0) throw ConfigError("noise.sigma: must be >= 0");
  // MNIST: top rows 0-13 / bottom rows 14-27. CIFAR: 14-row bands, top rows
  // 0-13 and bottom rows 18-31.
  const int64_t half_rows = 14;
  const int64_t top0 = 0;
  const int64_t bottom0 = kind == DatasetKind::kMnist ? 14 : 18;
  for (const RawImages* split : {&raw.train, &raw.test}) {
    if (split->rows < bottom0 + half_rows)
      throw DataError("split_views: images have " + std::to_string(split->rows) +
                      " rows, need " + std::to_string(bottom0 + half_rows));
  }
  cut_rows(raw.train, top0, half_rows, train1_);
  cut_rows(raw.train, bottom0, half_rows, train2_);
  cut_rows(raw.test, top0, half_rows, test1_);
  cut_rows(raw.test, bottom0, half_rows, test2_);
  train_labels_ = std::move(raw.train.labels);
  test_labels_ = std::move(raw.test.labels);
  d1_ = raw.train.channels * half_rows * raw.train.cols;
  d2_ = d1_;
  geo1_ = ViewGeometry{raw.train.channels, half_rows, raw.train.cols};
  if (noise_.enabled && noise_.coupled && d1_ != d2_)
    throw ConfigError("noise.coupled requires equal view dimensions");
}

int64_t ViewPairDataset::count(Split split) const {
  return split == Split::kTrain ? static_cast<int64_t>(train_labels_.size())
                                : static_cast<int64_t>(test_labels_.size());
}

const std::vector<int>& ViewPairDataset::labels(Split split) const {
  return split == Split::kTrain ? train_labels_ : test_labels_;
}

const std::vector<double>& ViewPairDataset::view1(Split split) const {
  return split == Split::kTrain ? train1_ : test1_;
}

const std::vector<double>& ViewPairDataset::view2(Split split) const {
  return split == Split::kTrain ? train2_ : test2_;
}

void ViewPairDataset::add_noise(int64_t image_index, uint64_t epoch, double* row1,
                                double* row2) const {
  if (!noise_.enabled) return;
  const uint64_t visit = noise_.fixed_per_image ? 0 : epoch;
  Rng rng(Rng::mix({seed_, 0x6e6f697365ull, visit, static_cast<uint64_t>(image_index)}));
  if (noise_.coupled) {
    for (int64_t j = 0; j < d1_; ++j) {
      const double z = noise_.sigma * rng.normal();
      row1[j] += z;
      row2[j] += z;
    }
  } else {
    for (int64_t j = 0; j < d1_; ++j) row1[j] += noise_.sigma * rng.normal();
    for (int64_t j = 0; j < d2_; ++j) row2[j] += noise_.sigma * rng.normal();
  }
}

void ViewPairDataset::gather(Split split, const std::vector<int64_t>& indices, uint64_t epoch,
                             double* out1, double* out2, int* labels_out) const {
  const auto& v1 = view1(split);
  const auto& v2 = view2(split);
  const auto& lab = labels(split);
  for (size_t r = 0; r < indices.size(); ++r) {
    const int64_t i = indices[r];
    std::memcpy(out1 + r * static_cast<size_t>(d1_), &v1[static_cast<size_t>(i * d1_)],
                static_cast<size_t>(d1_) * sizeof(double));
    std::memcpy(out2 + r * static_cast<size_t>(d2_), &v2[static_cast<size_t>(i * d2_)],
                static_cast<size_t>(d2_) * sizeof(double));
    add_noise(i, epoch, out1 + r * static_cast<size_t>(d1_), out2 + r * static_cast<size_t>(d2_));
    if (labels_out) labels_out[r] = lab[static_cast<size_t>(i)];
  }
}

void ViewPairDataset::materialize(Split split, uint64_t stream_tag, std::vector<double>& out1,
                                  std::vector<double>& out2) const {
  out1 = view1(split);
  out2 = view2(split);
  if (!noise_.enabled) return;
  const int64_t n = count(split);
  for (int64_t i = 0; i < n; ++i)
    add_noise(i, stream_tag, &out1[static_cast<size_t>(i * d1_)],
              &out2[static_cast<size_t>(i * d2_)]);
}

ViewPairDataset load_view_pairs(DatasetKind kind, const std::string& dir, NoiseSpec noise,
                                uint64_t seed) {
  RawDataset raw = kind == DatasetKind::kMnist ? load_mnist(dir) : load_cifar10(dir);
  return ViewPairDataset(std::move(raw), kind, noise, seed);
}

// ---- batching ----------------------------------------------------------------

BatchIterator::BatchIterator(const ViewPairDataset& dataset, Split split, int64_t batch_size,
                             uint64_t seed)
    : dataset_(dataset), split_(split), batch_size_(batch_size), seed_(seed),
      count_(dataset.count(split)) {
  if (batch_size_ < 1 || batch_size_ > count_)
    throw ConfigError("batch_size " + std::to_string(batch_size_) + " out of range for split of " +
                      std::to_string(count_));
  order_.resize(static_cast<size_t>(count_));
  for (int64_t i = 0; i < count_; ++i) order_[static_cast<size_t>(i)] = i;
  start_epoch();
}

void BatchIterator::start_epoch() {
  epoch_ += 1;
  cursor_ = 0;
  Rng rng(Rng::mix({seed_, 0x7368756666ull, static_cast<uint64_t>(epoch_),
                    split_ == Split::kTrain ? 0ull : 1ull}));
  for (int64_t i = 0; i < count_; ++i) order_[static_cast<size_t>(i)] = i;
  rng.shuffle(order_);
}

void BatchIterator::next(Batch& batch) {
  if (cursor_ + batch_size_ > count_) start_epoch();  // drops the remainder
  batch.size = batch_size_;
  batch.view1 = Tensor({batch_size_, dataset_.dim1()});
  batch.view2 = Tensor({batch_size_, dataset_.dim2()});
  batch.labels.resize(static_cast<size_t>(batch_size_));
  std::vector<int64_t> indices(order_.begin() + cursor_, order_.begin() + cursor_ + batch_size_);
  dataset_.gather(split_, indices, static_cast<uint64_t>(epoch_), batch.view1.data.data(),
                  batch.view2.data.data(), batch.labels.data());
  cursor_ += batch_size_;
}

}  // namespace milens
