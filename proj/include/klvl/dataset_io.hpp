#ifndef KLVL_DATASET_IO_HPP
#define KLVL_DATASET_IO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "problem.hpp"

namespace klvl {

// Columnar binary dataset format. Layout (little-endian):
//   16-byte header: magic "KLVL", u32 version, u32 level count, u32 reserved
//   u64 generation seed
//   per level: u64 sample count, u64 payload dim
//   per level: payload matrix, column (= sample) by column, f64 entries
inline void save_dataset(const dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("save_dataset: cannot open " + path);
  const char magic[4] = {'K', 'L', 'V', 'L'};
  out.write(magic, 4);
  auto put_u32 = [&](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  auto put_u64 = [&](std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  };
  put_u32(1u);
  put_u32(static_cast<std::uint32_t>(d.levels()));
  put_u32(0u);
  put_u64(d.seed());
  for (int k = 1; k <= d.levels(); ++k) {
    put_u64(static_cast<std::uint64_t>(d.count(k)));
    put_u64(static_cast<std::uint64_t>(d.payload_dim(k)));
  }
  for (int k = 1; k <= d.levels(); ++k) {
    const mat& m = d.level_payloads(k);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double)) * m.size());
  }
  if (!out) throw config_error("save_dataset: write failed for " + path);
}

inline dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("load_dataset: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "KLVL", 4) != 0)
    throw invalid_input("load_dataset: bad magic in " + path);
  auto get_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto get_u64 = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  const std::uint32_t version = get_u32();
  if (version != 1u)
    throw invalid_input("load_dataset: unsupported version " +
                        std::to_string(version));
  const std::uint32_t levels = get_u32();
  get_u32();  // reserved
  const std::uint64_t seed = get_u64();
  std::vector<std::pair<std::uint64_t, std::uint64_t>> shapes(levels);
  for (auto& s : shapes) {
    s.first = get_u64();
    s.second = get_u64();
  }
  std::vector<mat> payloads(levels);
  for (std::uint32_t k = 0; k < levels; ++k) {
    payloads[k].resize(static_cast<index_t>(shapes[k].second),
                       static_cast<index_t>(shapes[k].first));
    in.read(reinterpret_cast<char*>(payloads[k].data()),
            static_cast<std::streamsize>(sizeof(double)) * payloads[k].size());
  }
  if (!in) throw invalid_input("load_dataset: truncated file " + path);
  return dataset(seed, std::move(payloads));
}

}  // namespace klvl

#endif  // KLVL_DATASET_IO_HPP
