#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "milens/datasets.hpp"
#include "milens/error.hpp"

using namespace milens;
using namespace milens::testing;

namespace {

// Small synthetic MNIST-format corpus: 12 train + 8 test images, pixel values
// that encode (image, position) so view cuts are checkable.
RawDataset synthetic_mnist(const std::string& dir) {
  auto make = [&](int n, const char* prefix) {
    std::vector<std::vector<unsigned char>> images;
    std::vector<unsigned char> labels;
    for (int i = 0; i < n; ++i) {
      std::vector<unsigned char> img(28 * 28);
      for (size_t p = 0; p < img.size(); ++p) img[p] = static_cast<unsigned char>((i * 31 + p) % 256);
      images.push_back(std::move(img));
      labels.push_back(static_cast<unsigned char>(i % 10));
    }
    write_idx_pair(dir + "/" + prefix + "-images-idx3-ubyte",
                   dir + "/" + prefix + "-labels-idx1-ubyte", images, labels);
  };
  make(12, "train");
  make(8, "t10k");
  return load_mnist(dir);
}

}  // namespace

TEST_CASE("idx loader rejects bad magic, truncation, and count mismatch") {
  std::vector<std::vector<unsigned char>> images(3, std::vector<unsigned char>(28 * 28, 7));
  std::vector<unsigned char> labels = {0, 1, 2};

  {
    const std::string dir = temp_dir("idx_bad_magic");
    write_idx_pair(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte", images,
                   labels, 28, 28, /*images_magic=*/1234);
    write_idx_pair(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", images,
                   labels);
    CHECK_THROWS_WITH_AS(load_mnist(dir), doctest::Contains("magic"), DataError);
  }
  {
    const std::string dir = temp_dir("idx_count_mismatch");
    std::vector<unsigned char> short_labels = {0, 1};
    write_idx_pair(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte", images,
                   short_labels);
    write_idx_pair(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", images,
                   labels);
    CHECK_THROWS_WITH_AS(load_mnist(dir), doctest::Contains("count"), DataError);
  }
  {
    const std::string dir = temp_dir("idx_truncated");
    write_idx_pair(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte", images,
                   labels);
    // Chop the last image short.
    std::filesystem::resize_file(dir + "/train-images-idx3-ubyte", 16 + 2 * 784 + 100);
    write_idx_pair(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", images,
                   labels);
    CHECK_THROWS_WITH_AS(load_mnist(dir), doctest::Contains("truncated"), DataError);
  }
  {
    const std::string dir = temp_dir("idx_missing");
    CHECK_THROWS_WITH_AS(load_mnist(dir), doctest::Contains("cannot open"), DataError);
  }
}

TEST_CASE("mnist views split at row 14 with flat 392-dim views") {
  const std::string dir = temp_dir("mnist_views");
  RawDataset raw = synthetic_mnist(dir);
  CHECK(raw.train.count == 12);
  CHECK(raw.test.count == 8);
  ViewPairDataset ds(std::move(raw), DatasetKind::kMnist, NoiseSpec{}, 1);
  CHECK(ds.dim1() == 392);
  CHECK(ds.dim2() == 392);
  // Views are exact sub-images when noise is disabled.
  const auto& v1 = ds.view1(Split::kTrain);
  const auto& v2 = ds.view2(Split::kTrain);
  for (int i = 0; i < 12; ++i)
    for (int p = 0; p < 392; ++p) {
      const double top = ((i * 31 + p) % 256) / 255.0;
      const double bottom = ((i * 31 + 392 + p) % 256) / 255.0;
      CHECK(v1[static_cast<size_t>(i * 392 + p)] == top);
      CHECK(v2[static_cast<size_t>(i * 392 + p)] == bottom);
    }
}

TEST_CASE("coupled noise adds the same draw to both views of an image") {
  const std::string dir = temp_dir("mnist_noise");
  RawDataset raw = synthetic_mnist(dir);
  NoiseSpec noise;
  noise.enabled = true;
  noise.sigma = 0.05;
  noise.coupled = true;
  ViewPairDataset ds(std::move(raw), DatasetKind::kMnist, noise, 7);

  std::vector<double> n1, n2;
  ds.materialize(Split::kTrain, /*stream_tag=*/3, n1, n2);
  const auto& c1 = ds.view1(Split::kTrain);
  const auto& c2 = ds.view2(Split::kTrain);
  // The same draw is added to both views; recovering it by subtraction costs
  // one rounding per view, so compare at ulp scale.
  double max_delta_gap = 0.0, max_noise = 0.0;
  for (size_t i = 0; i < n1.size(); ++i) {
    const double delta1 = n1[i] - c1[i];
    const double delta2 = n2[i] - c2[i];
    max_delta_gap = std::max(max_delta_gap, std::fabs(delta1 - delta2));
    max_noise = std::max(max_noise, std::fabs(delta1));
  }
  CHECK(max_delta_gap < 1e-15);
  CHECK(max_noise > 0.0);
  CHECK(max_noise < 0.05 * 6.0);  // 6 sigma

  // Re-draws differ across stream tags but are deterministic per tag.
  std::vector<double> m1, m2, r1, r2;
  ds.materialize(Split::kTrain, 4, m1, m2);
  CHECK(m1 != n1);
  ds.materialize(Split::kTrain, 3, r1, r2);
  CHECK(r1 == n1);
  CHECK(r2 == n2);
}

TEST_CASE("fixed_per_image noise ignores the epoch") {
  const std::string dir = temp_dir("mnist_fixed_noise");
  RawDataset raw = synthetic_mnist(dir);
  NoiseSpec noise;
  noise.enabled = true;
  noise.coupled = true;
  noise.fixed_per_image = true;
  ViewPairDataset ds(std::move(raw), DatasetKind::kMnist, noise, 7);
  std::vector<double> a1, a2, b1, b2;
  ds.materialize(Split::kTrain, 0, a1, a2);
  ds.materialize(Split::kTrain, 99, b1, b2);
  CHECK(a1 == b1);
}

TEST_CASE("batches are seeded, aligned, and drop the remainder") {
  const std::string dir = temp_dir("mnist_batches");
  RawDataset raw = synthetic_mnist(dir);
  ViewPairDataset ds(std::move(raw), DatasetKind::kMnist, NoiseSpec{}, 5);

  BatchIterator it_a(ds, Split::kTrain, 5, 42);
  BatchIterator it_b(ds, Split::kTrain, 5, 42);
  Batch a, b;
  for (int step = 0; step < 6; ++step) {
    it_a.next(a);
    it_b.next(b);
    CHECK(a.view1.data == b.view1.data);
    CHECK(a.view2.data == b.view2.data);
    CHECK(a.labels == b.labels);
  }

  // One epoch covers 2 batches of 5 = 10 of 12 images; the union of the two
  // batches has no repeats (remainder dropped).
  BatchIterator it(ds, Split::kTrain, 5, 43);
  std::set<std::pair<double, double>> seen;
  Batch batch;
  for (int step = 0; step < 2; ++step) {
    it.next(batch);
    CHECK(it.epoch() == 0);
    for (int64_t r = 0; r < 5; ++r)
      seen.insert({batch.view1.data[static_cast<size_t>(r * 392)],
                   batch.view1.data[static_cast<size_t>(r * 392 + 1)]});
  }
  CHECK(seen.size() == 10);
  it.next(batch);
  CHECK(it.epoch() == 1);

  // Alignment: view2 row and label belong to the same source image as view1.
  for (int64_t r = 0; r < 5; ++r) {
    const double first = batch.view1.data[static_cast<size_t>(r * 392)] * 255.0;
    const int image = static_cast<int>(std::lround(first)) % 31 == 0
                          ? static_cast<int>(std::lround(first)) / 31
                          : -1;
    if (image >= 0) {
      CHECK(batch.labels[static_cast<size_t>(r)] == image % 10);
      CHECK(batch.view2.data[static_cast<size_t>(r * 392)] ==
            doctest::Approx(((image * 31 + 392) % 256) / 255.0));
    }
  }
}

TEST_CASE("batch size larger than the split is rejected") {
  const std::string dir = temp_dir("mnist_batch_size");
  RawDataset raw = synthetic_mnist(dir);
  ViewPairDataset ds(std::move(raw), DatasetKind::kMnist, NoiseSpec{}, 5);
  CHECK_THROWS_AS(BatchIterator(ds, Split::kTrain, 13, 1), ConfigError);
}

TEST_CASE("cifar loader parses records and preserves RGB planes") {
  const std::string dir = temp_dir("cifar_ok");
  std::vector<std::pair<unsigned char, std::vector<unsigned char>>> records;
  for (int i = 0; i < 4; ++i) {
    std::vector<unsigned char> px(3072);
    for (int p = 0; p < 1024; ++p) {
      px[static_cast<size_t>(p)] = 10;          // R plane
      px[static_cast<size_t>(1024 + p)] = 20;   // G plane
      px[static_cast<size_t>(2048 + p)] = 30;   // B plane
    }
    records.push_back({static_cast<unsigned char>(i % 10), px});
  }
  for (int b = 1; b <= 5; ++b)
    write_cifar_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", records);
  write_cifar_batch(dir + "/test_batch.bin", records);

  RawDataset raw = load_cifar10(dir);
  CHECK(raw.train.count == 20);
  CHECK(raw.test.count == 4);
  CHECK(raw.test.channels == 3);
  CHECK(raw.test.pixels[0] == doctest::Approx(10 / 255.0));
  CHECK(raw.test.pixels[1024] == doctest::Approx(20 / 255.0));
  CHECK(raw.test.pixels[2048] == doctest::Approx(30 / 255.0));

  ViewPairDataset ds(std::move(raw), DatasetKind::kCifar10, NoiseSpec{}, 1);
  CHECK(ds.dim1() == 3 * 14 * 32);  // 1344
  CHECK(ds.view1_geometry().channels == 3);
  CHECK(ds.view1_geometry().height == 14);
  CHECK(ds.view1_geometry().width == 32);
}

TEST_CASE("cifar loader rejects malformed files") {
  const std::string dir = temp_dir("cifar_bad");
  // Wrong record size.
  {
    std::ofstream out(dir + "/data_batch_1.bin", std::ios::binary);
    std::vector<char> junk(3072, 1);  // one byte short of a record
    out.write(junk.data(), static_cast<std::streamsize>(junk.size()));
  }
  for (int b = 2; b <= 5; ++b)
    write_cifar_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", {});
  CHECK_THROWS_WITH_AS(load_cifar10(dir), doctest::Contains("3073"), DataError);

  // Label out of range.
  std::vector<unsigned char> px(3072, 0);
  write_cifar_batch(dir + "/data_batch_1.bin", {{11, px}});
  for (int b = 2; b <= 5; ++b)
    write_cifar_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", {{0, px}});
  write_cifar_batch(dir + "/test_batch.bin", {{0, px}});
  CHECK_THROWS_WITH_AS(load_cifar10(dir), doctest::Contains("label"), DataError);
}

TEST_CASE("real MNIST: canonical counts, scaling, and pixel statistics") {
  if (!real_mnist_available()) {
    MESSAGE("MI_LENS_DATA_DIR has no MNIST; skipping real-data checks");
    return;
  }
  RawDataset raw = load_mnist(real_data_dir() + "/mnist");
  CHECK(raw.train.count == 60000);
  CHECK(raw.test.count == 10000);
  const double max_pixel = *std::max_element(raw.train.pixels.begin(), raw.train.pixels.end());
  CHECK(max_pixel == 1.0);

  ViewPairDataset ds(std::move(raw), DatasetKind::kMnist, NoiseSpec{}, 1);
  CHECK(ds.dim1() == 392);
  // Pixel standard deviation over the clean train views is about 0.3.
  const auto& v1 = ds.view1(Split::kTrain);
  const auto& v2 = ds.view2(Split::kTrain);
  double sum = 0.0, sumsq = 0.0;
  for (double x : v1) { sum += x; sumsq += x * x; }
  for (double x : v2) { sum += x; sumsq += x * x; }
  const double n = static_cast<double>(v1.size() + v2.size());
  const double std_dev = std::sqrt(sumsq / n - (sum / n) * (sum / n));
  CHECK(std_dev == doctest::Approx(0.3).epsilon(0.05 / 0.3));
}
