#include "milens/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "milens/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts need byte swaps");

namespace milens {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'N', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in, const std::string& path) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw DataError(path + ": truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open checkpoint for writing");
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u32(out, static_cast<uint32_t>(store.size()));
  for (const auto& p : store) {
    write_u32(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(out, static_cast<uint32_t>(p.value.shape.size()));
    out.write(reinterpret_cast<const char*>(p.value.shape.data()),
              static_cast<std::streamsize>(p.value.shape.size() * sizeof(int64_t)));
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
  }
  if (!out) throw DataError(path + ": checkpoint write failed");
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open checkpoint");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError(path + ": not a checkpoint file (bad magic)");
  const uint32_t version = read_u32(in, path);
  if (version != kVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = read_u32(in, path);
  std::map<std::string, Tensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t ndim = read_u32(in, path);
    Shape shape(ndim);
    in.read(reinterpret_cast<char*>(shape.data()),
            static_cast<std::streamsize>(ndim * sizeof(int64_t)));
    if (!in) throw DataError(path + ": truncated checkpoint");
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw DataError(path + ": truncated checkpoint");
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void restore_checkpoint(ParamStore& store, const std::string& path) {
  const auto entries = load_checkpoint(path);
  if (entries.size() != store.size())
    throw DataError(path + ": checkpoint has " + std::to_string(entries.size()) +
                    " entries, store has " + std::to_string(store.size()));
  for (auto& p : store) {
    const auto it = entries.find(p.name);
    if (it == entries.end()) throw DataError(path + ": missing parameter '" + p.name + "'");
    if (it->second.shape != p.value.shape)
      throw DataError(path + ": shape mismatch for '" + p.name + "'");
    p.value.data = it->second.data;
  }
}

}  // namespace milens
