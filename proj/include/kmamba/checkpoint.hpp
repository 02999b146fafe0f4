#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "kmamba/model.hpp"
#include "kmamba/ssm.hpp"

// Binary container: "KMCKPT01", u64 little-endian header length, JSON
// header, then every array as float64 little-endian in header order.

namespace kmamba::checkpoint {

inline constexpr char kMagic[8] = {'K', 'M', 'C', 'K', 'P', 'T', '0', '1'};

struct Container {
  nlohmann::json header = nlohmann::json::object();
  std::vector<ssm::NamedArray> arrays;
};

void write(const std::filesystem::path& path, const Container& c);
// Throws IoError on a bad magic, a truncated payload or a malformed header.
Container read(const std::filesystem::path& path);

// Header keys: variant, config, parts (preprocessor + network config),
// threshold, and `extra` for caller metadata.
Container pack(const model::Model& m, const nlohmann::json& extra = nlohmann::json::object());
model::Model unpack(const Container& c);

void save_model(const std::filesystem::path& path, const model::Model& m,
                const nlohmann::json& extra = nlohmann::json::object());
model::Model load_model(const std::filesystem::path& path);

}  // namespace kmamba::checkpoint
