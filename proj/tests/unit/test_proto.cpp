#include <doctest.h>

#include <random>
#include <vector>

#include "myo/error.hpp"
#include "myo/proto.hpp"
#include "support.hpp"

using namespace myo;

namespace {

// Byte layout written out by hand: magic, u32 seq LE, u64 t_us LE, then
// 576 little-endian i16 samples in channel-major order.
std::vector<std::uint8_t> reference_encode(const EmgFrame& f) {
  std::vector<std::uint8_t> out;
  out.push_back(0xE7);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(f.seq >> (8 * i)));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(f.t_us >> (8 * i)));
  for (std::size_t c = 0; c < 32; ++c) {
    for (std::size_t s = 0; s < 18; ++s) {
      auto v = static_cast<std::uint16_t>(f.samples[c * 18 + s]);
      out.push_back(static_cast<std::uint8_t>(v & 0xFF));
      out.push_back(static_cast<std::uint8_t>(v >> 8));
    }
  }
  return out;
}

std::vector<std::uint8_t> stream_of(const std::vector<EmgFrame>& frames) {
  std::vector<std::uint8_t> bytes;
  for (const auto& f : frames) {
    auto b = encode_frame(f);
    bytes.insert(bytes.end(), b.begin(), b.end());
  }
  return bytes;
}

}  // namespace

TEST_CASE("frame size is 1165 bytes") {
  CHECK(kFrameBytes == 1165);
  EmgFrame zero;
  auto bytes = encode_frame(zero);
  CHECK(bytes[0] == 0xE7);
  for (std::size_t i = 1; i < bytes.size(); ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("encoder matches the hand-written layout") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    auto f = test::random_frame(rng);
    auto bytes = encode_frame(f);
    auto ref = reference_encode(f);
    REQUIRE(ref.size() == bytes.size());
    CHECK(std::equal(ref.begin(), ref.end(), bytes.begin()));
  }
}

TEST_CASE("sample at channel 3 index 5 lands at offset 13 + 2*(3*18+5)") {
  EmgFrame f;
  f.at(3, 5) = 0x1234;
  auto bytes = encode_frame(f);
  std::size_t off = 13 + 2 * (3 * 18 + 5);
  CHECK(bytes[off] == 0x34);
  CHECK(bytes[off + 1] == 0x12);
}

TEST_CASE("random frames round-trip bit-exactly") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 1000; ++i) {
    auto f = test::random_frame(rng);
    auto bytes = encode_frame(f);
    auto r = decode_frame(bytes);
    REQUIRE(r.status == DecodeStatus::Ok);
    CHECK(r.frame == f);
    CHECK(encode_frame(r.frame) == bytes);
  }
}

TEST_CASE("decode rejects bad magic and short input") {
  EmgFrame f;
  auto bytes = encode_frame(f);
  bytes[0] = 0x00;
  CHECK(decode_frame(bytes).status == DecodeStatus::BadMagic);
  bytes[0] = 0xE7;
  CHECK(decode_frame(std::span(bytes).first(1164)).status == DecodeStatus::Truncated);
  CHECK(decode_frame(std::span<const std::uint8_t>{}).status == DecodeStatus::Truncated);
}

TEST_CASE("parser reassembles frames split at arbitrary positions") {
  std::mt19937_64 rng(3);
  std::vector<EmgFrame> frames;
  for (int i = 0; i < 50; ++i) frames.push_back(test::random_frame(rng));
  auto bytes = stream_of(frames);

  for (int trial = 0; trial < 20; ++trial) {
    FrameParser parser;
    std::vector<EmgFrame> out;
    std::size_t pos = 0;
    std::uniform_int_distribution<std::size_t> chunk(1, 3000);
    while (pos < bytes.size()) {
      auto n = std::min(chunk(rng), bytes.size() - pos);
      parser.feed(std::span(bytes).subspan(pos, n));
      pos += n;
      while (auto f = parser.next()) out.push_back(*f);
    }
    CHECK(out == frames);
    CHECK(parser.buffered() == 0);
  }
}

TEST_CASE("parser survives one byte at a time") {
  std::mt19937_64 rng(5);
  std::vector<EmgFrame> frames{test::random_frame(rng), test::random_frame(rng)};
  auto bytes = stream_of(frames);
  FrameParser parser;
  std::vector<EmgFrame> out;
  for (auto b : bytes) {
    parser.feed(std::span(&b, 1));
    while (auto f = parser.next()) out.push_back(*f);
  }
  CHECK(out == frames);
}

TEST_CASE("parser resyncs after garbage") {
  EmgFrame a = test::frame_at(1), b = test::frame_at(2);
  a.at(0, 0) = 100;
  b.at(31, 17) = -5;
  std::vector<std::uint8_t> bytes{0x01, 0x02, 0x03, 0x55};
  auto ea = encode_frame(a);
  bytes.insert(bytes.end(), ea.begin(), ea.end());
  for (int i = 0; i < 10; ++i) bytes.push_back(0xAA);
  auto eb = encode_frame(b);
  bytes.insert(bytes.end(), eb.begin(), eb.end());

  FrameParser parser;
  parser.feed(bytes);
  auto f1 = parser.next();
  auto f2 = parser.next();
  REQUIRE(f1);
  REQUIRE(f2);
  CHECK(*f1 == a);
  CHECK(*f2 == b);
  CHECK(parser.resync_bytes() == 14);
  CHECK_FALSE(parser.next());
}

TEST_CASE("buffer keeps the newest 20 contiguous frames") {
  FrameBuffer buf;
  CHECK(buf.capacity() == 20);
  for (std::uint32_t s = 0; s < 19; ++s) buf.push(test::frame_at(s));
  CHECK_FALSE(buf.full());
  CHECK_THROWS_AS(buf.concat(), Error);
  buf.push(test::frame_at(19));
  CHECK(buf.full());
  CHECK(buf.span_samples() == 360);
  for (std::uint32_t s = 20; s < 45; ++s) buf.push(test::frame_at(s));
  CHECK(buf.oldest().seq == 25);
  CHECK(buf.newest().seq == 44);
  for (std::size_t i = 0; i < 20; ++i) CHECK(buf[i].seq == 25 + i);
  CHECK(buf.gaps() == 0);
}

TEST_CASE("seq gap flushes the buffer") {
  FrameBuffer buf;
  for (std::uint32_t s = 0; s <= 5; ++s) buf.push(test::frame_at(s));
  CHECK(buf.push(test::frame_at(7)) == PushStatus::GapFlushed);
  CHECK(buf.size() == 1);
  CHECK(buf.newest().seq == 7);
  CHECK(buf.gaps() == 1);
  // the window only fills again after 20 contiguous frames
  for (std::uint32_t s = 8; s < 26; ++s) buf.push(test::frame_at(s));
  CHECK_FALSE(buf.full());
  buf.push(test::frame_at(26));
  CHECK(buf.full());
}

TEST_CASE("seq wraps without a gap") {
  FrameBuffer buf;
  buf.push(test::frame_at(0xFFFFFFFFu));
  CHECK(buf.push(test::frame_at(0)) == PushStatus::Appended);
  CHECK(buf.gaps() == 0);
}

TEST_CASE("timestamp jitter warns but keeps frames") {
  FrameBuffer buf(20, 3000, 9000);
  EmgFrame a = test::frame_at(0);
  EmgFrame b = test::frame_at(1);
  b.t_us = a.t_us + 9000 + 2999;
  EmgFrame c = test::frame_at(2);
  c.t_us = b.t_us + 9000 + 3001;
  buf.push(a);
  buf.push(b);
  CHECK(buf.jitter_warnings() == 0);
  buf.push(c);
  CHECK(buf.jitter_warnings() == 1);
  CHECK(buf.size() == 3);
}

TEST_CASE("concat is channel-major, oldest first") {
  FrameBuffer buf;
  for (std::uint32_t s = 0; s < 20; ++s) {
    auto f = test::frame_at(s);
    for (std::size_t c = 0; c < 32; ++c)
      for (std::size_t k = 0; k < 18; ++k) f.at(c, k) = static_cast<std::int16_t>(c * 1000 + s * 18 + k);
    buf.push(f);
  }
  auto m = buf.concat();
  REQUIRE(m.channels() == 32);
  REQUIRE(m.samples() == 360);
  for (std::size_t c = 0; c < 32; ++c)
    for (std::size_t t = 0; t < 360; ++t) CHECK(m(c, t) == static_cast<double>(c * 1000 + t));
}
