#include "core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rlfolio {

namespace {

// Everything on the wire is little-endian f64.
void put_le(double v, unsigned char out[8]) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  if constexpr (std::endian::native == std::endian::big) {
    bits = __builtin_bswap64(bits);
  }
  std::memcpy(out, &bits, 8);
}

double get_le(const unsigned char in[8]) {
  std::uint64_t bits;
  std::memcpy(&bits, in, 8);
  if constexpr (std::endian::native == std::endian::big) {
    bits = __builtin_bswap64(bits);
  }
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& base_path, const std::vector<NamedTensor>& tensors) {
  std::ostringstream manifest;
  std::ofstream blob(base_path + ".blob", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open for writing: " + base_path + ".blob");
  std::uint64_t offset = 0;
  for (const auto& nt : tensors) {
    const auto& shape = nt.tensor.shape();
    manifest << nt.name << ' ' << shape.size();
    for (auto d : shape) manifest << ' ' << d;
    manifest << ' ' << offset << '\n';
    for (double v : nt.tensor.values()) {
      unsigned char buf[8];
      put_le(v, buf);
      blob.write(reinterpret_cast<const char*>(buf), 8);
      offset += 8;
    }
  }
  if (!blob.good()) throw std::runtime_error("write failed: " + base_path + ".blob");
  blob.close();
  std::ofstream mf(base_path + ".manifest", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot open for writing: " + base_path + ".manifest");
  mf << manifest.str();
  if (!mf.good()) throw std::runtime_error("write failed: " + base_path + ".manifest");
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& base_path) {
  std::ifstream mf(base_path + ".manifest");
  if (!mf) throw std::runtime_error("cannot open checkpoint manifest: " + base_path + ".manifest");
  std::ifstream blob(base_path + ".blob", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open checkpoint blob: " + base_path + ".blob");

  std::vector<CheckpointEntry> out;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CheckpointEntry e;
    std::size_t rank = 0;
    std::uint64_t offset = 0;
    if (!(ls >> e.name >> rank)) {
      throw std::runtime_error("malformed manifest line: " + line);
    }
    e.shape.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
      if (!(ls >> e.shape[i])) throw std::runtime_error("malformed manifest line: " + line);
    }
    if (!(ls >> offset)) throw std::runtime_error("malformed manifest line: " + line);
    const std::int64_t n = numel(e.shape);
    e.values.resize(static_cast<std::size_t>(n));
    blob.seekg(static_cast<std::streamoff>(offset));
    for (std::int64_t i = 0; i < n; ++i) {
      unsigned char buf[8];
      blob.read(reinterpret_cast<char*>(buf), 8);
      if (!blob) throw std::runtime_error("checkpoint blob truncated at entry " + e.name);
      e.values[static_cast<std::size_t>(i)] = get_le(buf);
    }
    out.push_back(std::move(e));
  }
  return out;
}

const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries,
                                  const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw std::runtime_error("checkpoint entry not found: " + name);
}

}  // namespace rlfolio
