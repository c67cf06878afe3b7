#include "fednnu/dataset_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "fednnu/error.hpp"

namespace fednnu {
namespace fs = std::filesystem;
namespace {

using json = nlohmann::json;

std::string case_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03zu", i);
  return buf;
}

}  // namespace

std::string read_text_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError(p.string() + ": cannot open file");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(p.string() + ": write failed");
}

Bytes read_binary_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError(p.string() + ": cannot open file");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_binary_file(const fs::path& p, const Bytes& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(p.string() + ": write failed");
}

void save_dataset(const fs::path& dir, const StoredDataset& ds) {
  fs::create_directories(dir);
  json cases = json::array();
  for (std::size_t i = 0; i < ds.cases.size(); ++i) {
    const Case& c = ds.cases[i];
    const std::string stem = case_stem(i);
    Bytes img(c.image.size() * 8);
    for (std::size_t k = 0; k < c.image.size(); ++k) {
      const auto bits = std::bit_cast<std::uint64_t>(c.image.pixels[k]);
      for (int b = 0; b < 8; ++b) img[k * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    write_binary_file(dir / (stem + ".img"), img);
    write_binary_file(dir / (stem + ".mask"), Bytes(c.mask.pixels.begin(), c.mask.pixels.end()));
    cases.push_back(json{{"file", stem},
                         {"dims", json::array({c.image.height, c.image.width})},
                         {"spacing", json::array({c.spacing[0], c.spacing[1]})}});
  }
  json side{{"center_id", ds.center_id}, {"seed", ds.seed}, {"cases", cases}};
  write_text_file(dir / "dataset.json", side.dump(2) + "\n");
}

StoredDataset load_dataset(const fs::path& dir) {
  const fs::path sidecar = dir / "dataset.json";
  json side;
  try {
    side = json::parse(read_text_file(sidecar));
  } catch (const json::exception& e) {
    throw ConfigError(sidecar.string() + ": " + e.what());
  }
  StoredDataset ds;
  try {
    ds.center_id = side.at("center_id").get<NodeId>();
    ds.seed = side.at("seed").get<std::uint64_t>();
    for (const auto& c : side.at("cases")) {
      const std::string stem = c.at("file").get<std::string>();
      const auto h = c.at("dims").at(0).get<std::size_t>();
      const auto w = c.at("dims").at(1).get<std::size_t>();
      Case cs;
      cs.spacing = {c.at("spacing").at(0).get<double>(), c.at("spacing").at(1).get<double>()};
      const Bytes img = read_binary_file(dir / (stem + ".img"));
      const Bytes mask = read_binary_file(dir / (stem + ".mask"));
      if (h == 0 || w == 0 || img.size() != h * w * 8 || mask.size() != h * w) {
        throw ConfigError((dir / stem).string() + ": array sizes do not match dims [" + std::to_string(h) + "," +
                          std::to_string(w) + "]");
      }
      cs.image = Image(h, w);
      cs.mask = Mask(h, w);
      for (std::size_t k = 0; k < h * w; ++k) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t{img[k * 8 + b]} << (8 * b);
        cs.image.pixels[k] = std::bit_cast<double>(bits);
        cs.mask.pixels[k] = mask[k];
      }
      ds.cases.push_back(std::move(cs));
    }
  } catch (const json::exception& e) {
    throw ConfigError(sidecar.string() + ": " + e.what());
  }
  if (ds.cases.empty()) throw ConfigError(sidecar.string() + ": dataset has no cases");
  return ds;
}

}  // namespace fednnu
