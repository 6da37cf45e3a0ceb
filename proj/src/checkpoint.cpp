#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "drowsy/model.hpp"
#include "json.hpp"

namespace drowsy {

namespace {

constexpr char kMagic[4] = {'E', 'E', 'G', 'W'};
constexpr std::uint8_t kVersion = 1;

nlohmann::ordered_json config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["m"] = c.channels;
  j["n"] = c.length;
  j["N1"] = c.spatial_filters;
  j["l"] = c.kernel_length;
  j["variant"] = to_string(c.variant);
  j["bn_epsilon"] = c.bn_epsilon;
  return j;
}

ModelConfig config_from(const nlohmann::json& j) {
  ModelConfig c;
  c.channels = j.value("m", c.channels);
  c.length = j.value("n", c.length);
  c.spatial_filters = j.value("N1", c.spatial_filters);
  c.kernel_length = j.value("l", c.kernel_length);
  if (j.contains("variant")) c.variant = variant_from_string(j["variant"].get<std::string>());
  c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
  c.validate();
  return c;
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig config_from_json(const std::string& text) {
  try {
    return config_from(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid model config JSON: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["config"] = config_json(ckpt.config);
  header["seed"] = ckpt.seed;
  header["epoch"] = ckpt.epoch;
  auto tensors = nlohmann::ordered_json::array();
  ckpt.params.for_each([&](const char* name, std::span<const double> t) {
    tensors.push_back({{"name", name}, {"size", t.size()}});
  });
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(len >> (8 * k)));
  out.insert(out.end(), text.begin(), text.end());
  ckpt.params.for_each([&](const char*, std::span<const double> t) {
    for (double v : t) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
    }
  });
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError("not a model checkpoint");
  if (bytes[4] != kVersion) throw DataError("unsupported checkpoint version");
  std::uint32_t len = 0;
  for (int k = 0; k < 4; ++k) len |= static_cast<std::uint32_t>(bytes[5 + k]) << (8 * k);
  if (bytes.size() < 9 + static_cast<std::size_t>(len)) throw DataError("checkpoint truncated");

  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + len);
    ckpt.config = config_from(header.at("config"));
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.epoch = header.at("epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }

  ckpt.params = ModelParams::zeros(ckpt.config);
  std::size_t pos = 9 + len;
  ckpt.params.for_each([&](const char* name, std::span<double> t) {
    if (pos + 4 * t.size() > bytes.size())
      throw DataError(std::string("checkpoint truncated in tensor ") + name);
    for (double& v : t) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[pos + k]) << (8 * k);
      v = static_cast<double>(std::bit_cast<float>(bits));
      pos += 4;
    }
  });
  if (pos != bytes.size()) throw DataError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace drowsy
