#include "kmamba/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace kmamba {

namespace fs = std::filesystem;
using nlohmann::json;

json DatasetManifest::to_json() const {
  return json{{"format", "kmamba-dataset/1"},
              {"n_samples", n_samples},
              {"n_t", n_t},
              {"dt", dt},
              {"variables", variables},
              {"units", units},
              {"mechanism", mechanism},
              {"seed", seed},
              {"split", split},
              {"layout", "sample,time,variable"},
              {"dtype", "float64-le"}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  try {
    m.n_samples = j.at("n_samples").get<std::size_t>();
    m.n_t = j.at("n_t").get<std::size_t>();
    m.dt = j.at("dt").get<double>();
    m.variables = j.at("variables").get<std::vector<std::string>>();
    if (j.contains("units")) m.units = j.at("units").get<std::vector<std::string>>();
    if (j.contains("mechanism")) m.mechanism = j.at("mechanism");
    if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("split")) m.split = j.at("split").get<std::string>();
    if (j.contains("dtype") && j.at("dtype") != "float64-le") {
      throw IoError("dataset manifest: unsupported dtype " + j.at("dtype").dump());
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("dataset manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void DatasetManifest::validate() const {
  if (!(dt > 0.0)) throw ConfigError("dataset manifest: dt must be positive");
  std::set<std::string> seen;
  for (const auto& v : variables) {
    if (!seen.insert(v).second) throw ConfigError("dataset manifest: duplicate variable '" + v + "'");
  }
  if (!units.empty() && units.size() != variables.size()) {
    throw ConfigError("dataset manifest: units and variables differ in length");
  }
}

std::size_t TrajectoryDataset::variable_index(const std::string& name) const {
  for (std::size_t i = 0; i < manifest.variables.size(); ++i) {
    if (manifest.variables[i] == name) return i;
  }
  throw ConfigError("dataset has no variable '" + name + "'");
}

TrajectoryDataset TrajectoryDataset::subset(const std::vector<std::size_t>& indices) const {
  const std::size_t nt = steps(), p = variables(), row = nt * p;
  TrajectoryDataset out;
  out.manifest = manifest;
  out.manifest.n_samples = indices.size();
  out.data = Array({indices.size(), nt, p});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= samples()) throw ShapeError("subset: sample index out of range");
    std::copy_n(&data[indices[k] * row], row, &out.data[k * row]);
  }
  return out;
}

Array TrajectoryDataset::initial_conditions() const {
  const std::size_t n = samples(), nt = steps(), p = variables();
  Array out({n, p});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t v = 0; v < p; ++v) out.at(s, v) = data[s * nt * p + v];
  }
  return out;
}

void append_f64_le(std::string& out, std::span<const double> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 8);
  char* dst = out.data() + start;
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(dst, &bits, 8);
    dst += 8;
  }
}

void read_f64_le(const char* bytes, std::span<double> out) {
  for (double& v : out) {
    std::uint64_t bits;
    std::memcpy(&bits, bytes, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    v = std::bit_cast<double>(bits);
    bytes += 8;
  }
}

void write_dataset(const fs::path& dir, const TrajectoryDataset& ds) {
  DatasetManifest m = ds.manifest;
  m.n_samples = ds.samples();
  m.n_t = ds.steps();
  if (ds.data.rank() == 3 && ds.variables() != m.variables.size()) {
    throw ShapeError("write_dataset: data has " + std::to_string(ds.variables()) +
                     " variables, manifest names " + std::to_string(m.variables.size()));
  }
  m.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::string payload;
  append_f64_le(payload, ds.data.data());
  {
    std::ofstream f(dir / "data.bin", std::ios::binary | std::ios::trunc);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw IoError("cannot write " + (dir / "data.bin").string());
  }
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  f << m.to_json().dump(2) << "\n";
  if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
}

TrajectoryDataset read_dataset(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("cannot open " + (dir / "manifest.json").string());
  json j;
  try {
    mf >> j;
  } catch (const json::exception& e) {
    throw IoError("corrupt manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  TrajectoryDataset ds;
  ds.manifest = DatasetManifest::from_json(j);
  const auto& m = ds.manifest;

  std::ifstream df(dir / "data.bin", std::ios::binary);
  if (!df) throw IoError("cannot open " + (dir / "data.bin").string());
  std::stringstream buf;
  buf << df.rdbuf();
  const std::string bytes = buf.str();
  const std::size_t expected = m.n_samples * m.n_t * m.variables.size() * 8;
  if (bytes.size() != expected) {
    throw IoError("dataset length mismatch: manifest implies " + std::to_string(expected) +
                  " bytes, data.bin has " + std::to_string(bytes.size()));
  }
  ds.data = Array({m.n_samples, m.n_t, m.variables.size()});
  read_f64_le(bytes.data(), ds.data.data());
  return ds;
}

}  // namespace kmamba
