#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "drowsy/dataset.hpp"
#include "json.hpp"

namespace drowsy {

namespace {

constexpr std::uint8_t kVersion = 1;
constexpr char kMagic[4] = {'E', 'E', 'G', 'B'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size())
      throw TruncatedError(std::string("EEGB container truncated while reading ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes_[pos_ + k]) << (8 * k);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_container(const DatasetBundle& bundle) {
  nlohmann::ordered_json header;
  header["sample_count"] = bundle.samples.size();
  header["channels"] = kChannels;
  header["length"] = kSamplesPerWindow;
  header["rate_hz"] = static_cast<int>(kSampleRateHz);
  header["kind"] = to_string(bundle.kind);
  auto names = nlohmann::ordered_json::array();
  for (auto n : channel_names()) names.push_back(std::string(n));
  header["channel_names"] = names;
  auto subjects = nlohmann::ordered_json::array();
  for (const auto& [sid, c] : bundle.per_subject_counts())
    subjects.push_back({{"id", sid}, {"alert", c.alert}, {"drowsy", c.drowsy}});
  header["subjects"] = subjects;

  // Optional extension: reaction times, so balancing survives a round trip.
  bool any_rt = false;
  for (const auto& s : bundle.samples) any_rt = any_rt || !std::isnan(s.local_rt);
  if (any_rt) {
    auto rts = nlohmann::ordered_json::array();
    for (const auto& s : bundle.samples) {
      if (std::isnan(s.local_rt))
        rts.push_back(nullptr);
      else
        rts.push_back(s.local_rt);
    }
    header["local_rt"] = rts;
  }
  bool any_session = false;
  for (const auto& s : bundle.samples) any_session = any_session || s.session_id != 0;
  if (any_session) {
    auto ids = nlohmann::ordered_json::array();
    for (const auto& s : bundle.samples) ids.push_back(s.session_id);
    header["session_id"] = ids;
  }

  for (const auto& s : bundle.samples) {
    if (s.channels != kChannels || s.length != kSamplesPerWindow ||
        s.signal.size() != kChannels * kSamplesPerWindow)
      throw DimensionError("encode_container: samples must be 30 x 384");
    if (s.subject_id < 0 || s.subject_id > 0xffff)
      throw DataError("encode_container: subject id out of u16 range");
  }

  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(9 + text.size() + bundle.samples.size() * (3 + 4 * kChannels * kSamplesPerWindow));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& s : bundle.samples) {
    put_u16(out, static_cast<std::uint16_t>(s.subject_id));
    out.push_back(static_cast<std::uint8_t>(s.label));
    for (float v : s.signal) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

DatasetBundle decode_container(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw MagicError("not an EEGB container");
  const std::uint8_t version = in.u8("version");
  if (version != kVersion)
    throw ContainerError("unsupported EEGB version " + std::to_string(version));
  const std::uint32_t header_len = in.u32("header length");
  const auto header_bytes = in.take(header_len, "header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(std::string("malformed EEGB header: ") + e.what());
  }

  std::size_t count = 0, channels = 0, length = 0;
  BundleKind kind;
  try {
    count = header.at("sample_count").get<std::size_t>();
    channels = header.at("channels").get<std::size_t>();
    length = header.at("length").get<std::size_t>();
    kind = bundle_kind_from_string(header.at("kind").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(std::string("incomplete EEGB header: ") + e.what());
  }
  if (channels != kChannels || length != kSamplesPerWindow)
    throw DimensionError("EEGB dimensions " + std::to_string(channels) + " x " +
                         std::to_string(length) + ", expected 30 x 384");
  if (header.contains("channel_names") && header["channel_names"].size() != kChannels)
    throw DimensionError("EEGB header lists " + std::to_string(header["channel_names"].size()) +
                         " channel names");

  const std::size_t per_sample = 3 + 4 * channels * length;
  if (in.remaining() < count * per_sample)
    throw TruncatedError("EEGB payload holds " + std::to_string(in.remaining()) +
                         " bytes, header announces " + std::to_string(count) + " samples");
  if (in.remaining() > count * per_sample)
    throw ContainerError("EEGB payload has trailing bytes");

  std::vector<double> rts;
  if (header.contains("local_rt")) {
    const auto& arr = header["local_rt"];
    if (arr.size() != count) throw ContainerError("EEGB local_rt length mismatch");
    for (const auto& v : arr)
      rts.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
  }

  std::vector<int> sessions;
  if (header.contains("session_id")) {
    const auto& arr = header["session_id"];
    if (arr.size() != count) throw ContainerError("EEGB session_id length mismatch");
    for (const auto& v : arr) sessions.push_back(v.get<int>());
  }

  DatasetBundle bundle;
  bundle.kind = kind;
  bundle.samples.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    auto& s = bundle.samples[k];
    s.subject_id = in.u16("subject id");
    const std::uint8_t label = in.u8("label");
    if (label > 1) throw ContainerError("EEGB label must be 0 or 1");
    s.label = static_cast<Label>(label);
    s.signal.resize(channels * length);
    for (float& v : s.signal) {
      v = std::bit_cast<float>(in.u32("signal"));
      if (!std::isfinite(v)) throw ContainerError("EEGB signal holds a non-finite value");
    }
    if (!rts.empty()) s.local_rt = rts[k];
    if (!sessions.empty()) s.session_id = sessions[k];
  }

  if (header.contains("subjects")) {
    const auto counts = bundle.per_subject_counts();
    std::size_t listed = 0;
    for (const auto& entry : header["subjects"]) {
      const int sid = entry.at("id").get<int>();
      auto it = counts.find(sid);
      const ClassCounts want{entry.at("alert").get<std::size_t>(),
                             entry.at("drowsy").get<std::size_t>()};
      if (it == counts.end() ? want.total() != 0 : !(it->second == want))
        throw ContainerError("EEGB subject table disagrees with payload for subject " +
                             std::to_string(sid));
      ++listed;
    }
    if (listed != counts.size()) throw ContainerError("EEGB subject table incomplete");
  }
  return bundle;
}

void export_container(const DatasetBundle& bundle, const std::filesystem::path& path) {
  const auto bytes = encode_container(bundle);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

DatasetBundle import_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

void export_metadata_csv(const DatasetBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "subject,label,index\n";
  for (std::size_t k = 0; k < bundle.samples.size(); ++k)
    out << bundle.samples[k].subject_id << ',' << to_int(bundle.samples[k].label) << ',' << k
        << '\n';
}

namespace {
std::vector<long> read_integer_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<long> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double v;
    if (!(ls >> v)) throw DataError("non-numeric line in " + path.string());
    values.push_back(static_cast<long>(std::lround(v)));
  }
  return values;
}
}  // namespace

DatasetBundle import_published_arrays(const std::filesystem::path& signals_f32,
                                      const std::filesystem::path& subject_index,
                                      const std::filesystem::path& states, BundleKind kind) {
  const auto subjects = read_integer_lines(subject_index);
  const auto labels = read_integer_lines(states);
  if (subjects.size() != labels.size())
    throw DataError("subject index and state files differ in length");

  std::ifstream in(signals_f32, std::ios::binary);
  if (!in) throw DataError("cannot open " + signals_f32.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  const std::size_t per = kChannels * kSamplesPerWindow * 4;
  if (raw.size() != subjects.size() * per)
    throw DimensionError("signal file holds " + std::to_string(raw.size()) + " bytes, expected " +
                         std::to_string(subjects.size()) + " x 30 x 384 f32 values");

  DatasetBundle bundle;
  bundle.kind = kind;
  bundle.samples.resize(subjects.size());
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    auto& s = bundle.samples[k];
    if (labels[k] != 0 && labels[k] != 1) throw DataError("state values must be 0 or 1");
    s.subject_id = static_cast<int>(subjects[k]);
    s.label = static_cast<Label>(labels[k]);
    s.signal.resize(kChannels * kSamplesPerWindow);
    const std::uint8_t* p = raw.data() + k * per;
    for (std::size_t v = 0; v < s.signal.size(); ++v, p += 4) {
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                                 (static_cast<std::uint32_t>(p[1]) << 8) |
                                 (static_cast<std::uint32_t>(p[2]) << 16) |
                                 (static_cast<std::uint32_t>(p[3]) << 24);
      s.signal[v] = std::bit_cast<float>(bits);
    }
  }
  return bundle;
}

void export_published_arrays(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream sig(dir / "signals.f32", std::ios::binary);
  std::ofstream subj(dir / "subject_index.txt");
  std::ofstream states(dir / "states.txt");
  if (!sig || !subj || !states) throw DataError("cannot write arrays under " + dir.string());
  std::vector<std::uint8_t> buf;
  for (const auto& s : bundle.samples) {
    if (s.channels != kChannels || s.length != kSamplesPerWindow || s.signal.size() != kChannels * kSamplesPerWindow)
      throw DimensionError("export_published_arrays: samples must be 30 x 384");
    buf.clear();
    for (float v : s.signal) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int k = 0; k < 4; ++k) buf.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
    }
    sig.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    subj << s.subject_id << '\n';
    states << to_int(s.label) << '\n';
  }
}

}  // namespace drowsy
