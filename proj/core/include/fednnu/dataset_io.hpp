#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fednnu/image.hpp"
#include "fednnu/state_dict.hpp"
#include "fednnu/wire.hpp"

namespace fednnu {

// On-disk dataset: per case `case_NNN.img` (float64 LE, row-major) and
// `case_NNN.mask` (uint8), described by `dataset.json` with dims, spacing,
// center id and generator seed.
struct StoredDataset {
  NodeId center_id = 0;
  std::uint64_t seed = 0;
  Dataset cases;
};

void save_dataset(const std::filesystem::path& dir, const StoredDataset& ds);
// Throws ConfigError on a missing or inconsistent sidecar or truncated arrays.
StoredDataset load_dataset(const std::filesystem::path& dir);

// Whole-file helpers; errors name the path.
std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& text);
Bytes read_binary_file(const std::filesystem::path& p);
void write_binary_file(const std::filesystem::path& p, const Bytes& bytes);

}  // namespace fednnu
