#pragma once

// Synthetic dataset files in the exact on-disk formats the loaders parse.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace milens::testing {

inline void write_be32(std::ofstream& out, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// IDX image file (magic 2051) + label file (magic 2049).
inline void write_idx_pair(const std::string& images_path, const std::string& labels_path,
                           const std::vector<std::vector<unsigned char>>& images,
                           const std::vector<unsigned char>& labels, uint32_t rows = 28,
                           uint32_t cols = 28, uint32_t images_magic = 2051,
                           uint32_t labels_magic = 2049) {
  std::ofstream img(images_path, std::ios::binary);
  write_be32(img, images_magic);
  write_be32(img, static_cast<uint32_t>(images.size()));
  write_be32(img, rows);
  write_be32(img, cols);
  for (const auto& image : images)
    img.write(reinterpret_cast<const char*>(image.data()),
              static_cast<std::streamsize>(image.size()));
  std::ofstream lab(labels_path, std::ios::binary);
  write_be32(lab, labels_magic);
  write_be32(lab, static_cast<uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

// One CIFAR-10 binary batch: 3073-byte records.
inline void write_cifar_batch(const std::string& path,
                              const std::vector<std::pair<unsigned char, std::vector<unsigned char>>>&
                                  records) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& [label, pixels] : records) {
    out.put(static_cast<char>(label));
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
  }
}

inline std::string temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("milens_test_" + tag);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// Data directory for tests that need the real corpus; empty if unavailable.
inline std::string real_data_dir() {
  const char* env = std::getenv("MI_LENS_DATA_DIR");
  if (!env || !*env) return {};
  return env;
}

inline bool real_mnist_available() {
  const std::string root = real_data_dir();
  return !root.empty() &&
         std::filesystem::exists(root + "/mnist/train-images-idx3-ubyte");
}

}  // namespace milens::testing
