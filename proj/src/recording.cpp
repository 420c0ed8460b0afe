#include "myo/recording.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "myo/bytes.hpp"
#include "myo/error.hpp"

namespace myo {

namespace {

constexpr char kMagic[4] = {'M', 'G', 'R', '1'};
constexpr std::uint8_t kChunkEnd = 0;
constexpr std::uint8_t kChunkFrames = 1;
constexpr std::uint8_t kChunkGuide = 2;
constexpr std::size_t kGuideBytes = 8 + 4 * kin::kHandDims + 1;

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> d) : data_(d) {}

  const std::uint8_t* take(std::size_t n) {
    if (data_.size() - pos_ < n) throw Error(Errc::CorruptFile, "session file truncated");
    const auto* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le() {
    return bytes::get_le<T>(take(sizeof(T)));
  }
  std::size_t pos() const noexcept { return pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

nlohmann::json stream_to_json(const StreamConfig& s) {
  return {{"sample_rate_hz", s.sample_rate_hz},
          {"channels", s.channels},
          {"samples_per_frame", s.samples_per_frame},
          {"adc_bits", s.adc_bits},
          {"gain", s.gain}};
}

StreamConfig stream_from_json(const nlohmann::json& j) {
  StreamConfig s;
  s.sample_rate_hz = j.at("sample_rate_hz").get<double>();
  s.channels = j.at("channels").get<std::size_t>();
  s.samples_per_frame = j.at("samples_per_frame").get<std::size_t>();
  s.adc_bits = j.at("adc_bits").get<int>();
  s.gain = j.at("gain").get<double>();
  if (s.channels != kChannels || s.samples_per_frame != kSamplesPerFrame) {
    throw Error(Errc::CorruptFile, "unsupported stream shape in session header");
  }
  return s;
}

}  // namespace

kin::HandState quantize_f32(const kin::HandState& s) noexcept {
  kin::HandState q{};
  for (std::size_t i = 0; i < kin::kHandDims; ++i) q[i] = static_cast<double>(static_cast<float>(s[i]));
  return q;
}

std::uint64_t guide_time_us(std::uint64_t start_t_us, std::uint64_t j) noexcept {
  return start_t_us + static_cast<std::uint64_t>(std::llround(static_cast<double>(j) * 1e6 / kGuideRateHz));
}

std::vector<std::string> SessionRecording::movements() const {
  std::vector<std::string> out;
  for (const auto& s : segments) out.push_back(s.movement);
  return out;
}

void SessionRecording::put_segment(Segment segment) {
  for (auto& s : segments) {
    if (s.movement == segment.movement) {
      s = std::move(segment);
      return;
    }
  }
  segments.push_back(std::move(segment));
}

const Segment* SessionRecording::find(const std::string& movement) const noexcept {
  for (const auto& s : segments) {
    if (s.movement == movement) return &s;
  }
  return nullptr;
}

std::size_t SessionRecording::frame_count() const noexcept {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.frames.size();
  return n;
}

bool operator==(const SessionRecording& a, const SessionRecording& b) {
  return a.session_id == b.session_id && a.created_at == b.created_at &&
         a.catalog.templates() == b.catalog.templates() && a.timing == b.timing &&
         a.stream.sample_rate_hz == b.stream.sample_rate_hz && a.stream.gain == b.stream.gain &&
         a.segments == b.segments;
}

std::vector<std::uint8_t> serialize_session(const SessionRecording& rec) {
  nlohmann::json header;
  header["schema_version"] = kSessionSchemaVersion;
  header["session_id"] = rec.session_id;
  header["created_at"] = rec.created_at;
  header["catalog"] = rec.catalog.to_json();
  header["stream"] = stream_to_json(rec.stream);
  header["guide_timing"] = rec.timing;
  header["movements"] = rec.movements();
  auto segs = nlohmann::json::array();
  for (const auto& s : rec.segments) {
    segs.push_back({{"movement", s.movement}, {"frames", s.frames.size()}, {"guide", s.guide.size()}});
  }
  header["segments"] = segs;
  std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  bytes::append_le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());

  for (std::size_t i = 0; i < rec.segments.size(); ++i) {
    const auto& s = rec.segments[i];
    out.push_back(kChunkFrames);
    bytes::append_le(out, static_cast<std::uint32_t>(i));
    bytes::append_le(out, static_cast<std::uint32_t>(s.frames.size()));
    bytes::append_le(out, static_cast<std::uint32_t>(s.frames.size() * kFrameBytes));
    for (const auto& f : s.frames) {
      auto enc = encode_frame(f);
      out.insert(out.end(), enc.begin(), enc.end());
    }
    out.push_back(kChunkGuide);
    bytes::append_le(out, static_cast<std::uint32_t>(i));
    bytes::append_le(out, static_cast<std::uint32_t>(s.guide.size()));
    bytes::append_le(out, static_cast<std::uint32_t>(s.guide.size() * kGuideBytes));
    for (const auto& g : s.guide) {
      bytes::append_le(out, g.t_us);
      for (double v : g.state) bytes::append_f32(out, static_cast<float>(v));
      out.push_back(g.movement);
    }
  }
  out.push_back(kChunkEnd);
  bytes::append_le(out, bytes::crc32(out));
  return out;
}

SessionRecording deserialize_session(std::span<const std::uint8_t> data) {
  Reader rd(data);
  const auto* magic = rd.take(4);
  if (!std::equal(magic, magic + 4, kMagic)) throw Error(Errc::CorruptFile, "not a session file");
  auto header_len = rd.le<std::uint32_t>();
  const auto* hp = rd.take(header_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hp, hp + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptFile, std::string("session header unreadable: ") + e.what());
  }
  auto version = header.value("schema_version", 0u);
  if (version != kSessionSchemaVersion) {
    throw Error(Errc::SchemaVersionMismatch, "session schema " + std::to_string(version) +
                                                 ", expected " + std::to_string(kSessionSchemaVersion));
  }

  SessionRecording rec;
  try {
    rec.session_id = header.at("session_id").get<std::string>();
    rec.created_at = header.at("created_at").get<std::string>();
    rec.catalog = kin::Catalog::from_json(header.at("catalog"));
    rec.stream = stream_from_json(header.at("stream"));
    rec.timing = header.at("guide_timing").get<kin::GuideTiming>();
    for (const auto& s : header.at("segments")) {
      Segment seg;
      seg.movement = s.at("movement").get<std::string>();
      rec.segments.push_back(std::move(seg));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptFile, std::string("session header invalid: ") + e.what());
  }

  std::vector<bool> have_frames(rec.segments.size()), have_guide(rec.segments.size());
  for (;;) {
    auto type = rd.le<std::uint8_t>();
    if (type == kChunkEnd) {
      std::size_t covered = rd.pos();
      auto crc = rd.le<std::uint32_t>();
      if (crc != bytes::crc32(data.first(covered))) {
        throw Error(Errc::CorruptFile, "session checksum mismatch");
      }
      break;
    }
    auto index = rd.le<std::uint32_t>();
    auto count = rd.le<std::uint32_t>();
    auto len = rd.le<std::uint32_t>();
    if (index >= rec.segments.size()) throw Error(Errc::CorruptFile, "chunk for unknown segment");
    auto& seg = rec.segments[index];
    if (type == kChunkFrames) {
      if (len != static_cast<std::uint64_t>(count) * kFrameBytes) throw Error(Errc::CorruptFile, "bad frame chunk");
      const auto* p = rd.take(len);
      seg.frames.reserve(count);
      for (std::uint32_t i = 0; i < count; ++i) {
        auto r = decode_frame({p + i * kFrameBytes, kFrameBytes});
        if (r.status != DecodeStatus::Ok) throw Error(Errc::CorruptFile, "bad frame in session");
        seg.frames.push_back(r.frame);
      }
      have_frames[index] = true;
    } else if (type == kChunkGuide) {
      if (len != static_cast<std::uint64_t>(count) * kGuideBytes) throw Error(Errc::CorruptFile, "bad guide chunk");
      const auto* p = rd.take(len);
      seg.guide.reserve(count);
      for (std::uint32_t i = 0; i < count; ++i) {
        const auto* e = p + i * kGuideBytes;
        GuideSample g;
        g.t_us = bytes::get_le<std::uint64_t>(e);
        for (std::size_t k = 0; k < kin::kHandDims; ++k) g.state[k] = bytes::get_f32(e + 8 + 4 * k);
        g.movement = e[8 + 4 * kin::kHandDims];
        seg.guide.push_back(g);
      }
      have_guide[index] = true;
    } else {
      throw Error(Errc::CorruptFile, "unknown chunk type " + std::to_string(type));
    }
  }
  for (std::size_t i = 0; i < rec.segments.size(); ++i) {
    if (!have_frames[i] || !have_guide[i]) throw Error(Errc::CorruptFile, "segment data missing");
  }
  return rec;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::string tmp = path + ".part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot create " + path);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw Error(Errc::DiskFull, "short write to " + path);
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error(Errc::IoError, "cannot move into " + path);
}

void save_session(const SessionRecording& rec, const std::string& path) {
  write_file(path, serialize_session(rec));
}

SessionRecording load_session(const std::string& path) { return deserialize_session(read_file(path)); }

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace myo
