#include "kmamba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kmamba/dataset.hpp"

namespace kmamba::checkpoint {

using nlohmann::json;

void write(const std::filesystem::path& path, const Container& c) {
  json header = c.header;
  json index = json::array();
  for (const auto& a : c.arrays) index.push_back({{"name", a.name}, {"shape", a.value.shape()}});
  header["arrays"] = index;
  const std::string text = header.dump();

  std::string bytes(kMagic, sizeof kMagic);
  std::uint64_t len = text.size();
  if constexpr (std::endian::native == std::endian::big) len = __builtin_bswap64(len);
  bytes.append(reinterpret_cast<const char*>(&len), sizeof len);
  bytes += text;
  for (const auto& a : c.arrays) append_f64_le(bytes, a.value.data());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  const std::string where = "checkpoint " + path.string() + ": ";
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IoError(where + "not a checkpoint (bad magic)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if constexpr (std::endian::native == std::endian::big) len = __builtin_bswap64(len);
  if (len > bytes.size() - 16) throw IoError(where + "truncated header");

  Container c;
  try {
    c.header = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw IoError(where + "malformed header: " + e.what());
  }
  std::size_t pos = 16 + len;
  try {
    for (const auto& entry : c.header.at("arrays")) {
      Shape shape = entry.at("shape").get<Shape>();
      Array value(shape);
      const std::size_t need = value.size() * sizeof(double);
      if (bytes.size() - pos < need) throw IoError(where + "truncated payload");
      read_f64_le(bytes.data() + pos, value.data());
      pos += need;
      c.arrays.push_back({entry.at("name").get<std::string>(), std::move(value)});
    }
  } catch (const json::exception& e) {
    throw IoError(where + "malformed array index: " + e.what());
  }
  if (pos != bytes.size()) throw IoError(where + "trailing bytes after payload");
  c.header.erase("arrays");
  return c;
}

Container pack(const model::Model& m, const json& extra) {
  Container c;
  c.header["format"] = "kmamba-checkpoint";
  c.header["variant"] = model::variant_name(m.variant);
  c.header["config"] = m.config.to_json();
  if (m.threshold) c.header["threshold"] = m.threshold->to_json();
  c.header["extra"] = extra;
  json parts = json::array();
  for (std::size_t k = 0; k < m.parts.size(); ++k) {
    const auto& part = m.parts[k];
    const std::string prefix = "part" + std::to_string(k) + "/";
    parts.push_back({{"preprocessor", part.prep.to_json()}, {"network", model::model_config_to_json(part.net.config())}});
    for (const auto& p : part.net.parameters()) c.arrays.push_back({prefix + p.name, p.value});
  }
  c.header["parts"] = parts;
  return c;
}

model::Model unpack(const Container& c) {
  try {
    model::Model m;
    m.variant = model::parse_variant(c.header.at("variant").get<std::string>());
    m.config = model::ExperimentConfig::from_json(c.header.at("config"));
    if (c.header.contains("threshold")) m.threshold = regimes::RegimeThreshold::from_json(c.header.at("threshold"));
    std::size_t next = 0;
    const auto& parts = c.header.at("parts");
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto prep = model::Preprocessor::from_json(parts[k].at("preprocessor"));
      auto net_cfg = model::model_config_from_json(parts[k].at("network"));
      const std::string prefix = "part" + std::to_string(k) + "/";
      std::vector<ssm::NamedArray> params;
      for (const auto& slot : ssm::Backbone::layout(net_cfg)) {
        if (next >= c.arrays.size() || c.arrays[next].name != prefix + slot.name) {
          throw IoError("checkpoint: missing parameter " + prefix + slot.name);
        }
        params.push_back({slot.name, c.arrays[next++].value});
      }
      m.parts.push_back({std::move(prep), ssm::Backbone(net_cfg, std::move(params))});
    }
    if (next != c.arrays.size()) throw IoError("checkpoint: unexpected extra arrays");
    const std::size_t want = m.variant == model::Variant::regime_pair ? 2 : 1;
    if (m.parts.size() != want) throw IoError("checkpoint: wrong number of model parts");
    if (m.variant == model::Variant::regime_pair && !m.threshold) throw IoError("checkpoint: regime pair without threshold");
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const model::Model& m, const json& extra) {
  write(path, pack(m, extra));
}

model::Model load_model(const std::filesystem::path& path) { return unpack(read(path)); }

}  // namespace kmamba::checkpoint
