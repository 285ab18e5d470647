#include "hg/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace hg {

namespace {

constexpr char kMagic[8] = {'H', 'G', 'C', 'K', 'P', 'T', '1', '\0'};

template <class T>
void put(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path, const char* what) {
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw std::runtime_error(path + ": truncated checkpoint while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const KeyValues& config, const ParamStore& params) {
  nlohmann::json header;
  header["config"] = config.entries();
  header["params"] = nlohmann::json::array();
  for (const auto& p : params.all()) header["params"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params.all())
    for (double v : p.tensor.data()) put(os, v);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_checkpoint: cannot open " + path);
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(path + ": not a checkpoint file (bad magic bytes)");
  }
  const auto len = get<std::uint64_t>(is, path, "header length");
  if (len > (std::uint64_t{1} << 30)) throw std::runtime_error(path + ": implausible checkpoint header length");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(is.gcount()) != len) throw std::runtime_error(path + ": truncated checkpoint header");

  CheckpointData out;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    for (const auto& [k, v] : header.at("config").items()) out.config.set(k, v.get<std::string>());
    for (const auto& p : header.at("params")) {
      const auto shape = p.at("shape").get<Shape>();
      std::vector<double> values(shape_numel(shape));
      for (auto& v : values) v = get<double>(is, path, "parameter values");
      out.params.add(p.at("name").get<std::string>(), Tensor::from(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": malformed checkpoint header: " + e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing bytes in checkpoint");
  return out;
}

void load_params_into(const ParamStore& src, ParamStore& dst) {
  if (src.size() != dst.size()) {
    throw ConfigError("checkpoint has " + std::to_string(src.size()) + " parameters, model expects " +
                      std::to_string(dst.size()));
  }
  for (auto& p : dst.all()) {
    if (!src.contains(p.name)) throw ConfigError("checkpoint is missing parameter " + p.name);
    const Tensor& s = src.get(p.name);
    if (s.shape() != p.tensor.shape()) {
      throw ConfigError("checkpoint parameter " + p.name + " has shape " + shape_str(s.shape()) + ", model expects " +
                        shape_str(p.tensor.shape()));
    }
    std::copy(s.data().begin(), s.data().end(), p.tensor.mutable_data().begin());
  }
}

}  // namespace hg
