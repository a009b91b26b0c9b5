#include "dspr/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

#include <json.hpp>

namespace dspr {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'P', 'R', 'C', 'K', 'P', 'T'};

template <typename T>
void write_le(std::ofstream& out, T value) {
  static_assert(std::is_integral_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  return value;
}

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  } else {
    for (double d : v) {
      uint64_t bits;
      std::memcpy(&bits, &d, sizeof(bits));
      write_le(out, bits);
    }
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json manifest;
  manifest["seed"] = ckpt.seed;
  manifest["config"] = nlohmann::json::parse(ckpt.config_json);
  manifest["metrics"] = ckpt.metrics;
  manifest["params"] = nlohmann::json::array();
  for (const auto& p : ckpt.params) {
    manifest["params"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  write_le<uint32_t>(out, ckpt.version);
  write_le<uint64_t>(out, static_cast<uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : ckpt.params) write_doubles(out, p.tensor.values());
  if (!out) throw std::runtime_error("write failed for checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path + " is not a checkpoint file");
  }
  Checkpoint ckpt;
  ckpt.version = read_le<uint32_t>(in);
  if (ckpt.version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint version mismatch: file has v" +
                             std::to_string(ckpt.version) + ", supported v" +
                             std::to_string(kCheckpointVersion));
  }
  const auto manifest_len = read_le<uint64_t>(in);
  std::string text(manifest_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) throw std::runtime_error("truncated checkpoint manifest in " + path);
  const auto manifest = nlohmann::json::parse(text);

  ckpt.seed = manifest.at("seed").get<uint64_t>();
  ckpt.config_json = manifest.at("config").dump();
  for (const auto& [k, v] : manifest.at("metrics").items()) {
    ckpt.metrics[k] = v.get<double>();
  }
  for (const auto& p : manifest.at("params")) {
    const Shape shape = p.at("shape").get<Shape>();
    std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
    if constexpr (std::endian::native == std::endian::little) {
      in.read(reinterpret_cast<char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
    } else {
      for (auto& d : values) {
        const uint64_t bits = read_le<uint64_t>(in);
        std::memcpy(&d, &bits, sizeof(d));
      }
    }
    if (!in) throw std::runtime_error("truncated parameter blob in " + path);
    ckpt.params.push_back({p.at("name").get<std::string>(),
                           Tensor::from(shape, std::move(values))});
  }
  return ckpt;
}

}  // namespace dspr
