#include <doctest.h>

#include <algorithm>
#include <string>

#include "myo/error.hpp"
#include "myo/recording.hpp"
#include "myo/simdev.hpp"
#include "support.hpp"

using namespace myo;

namespace {

SessionRecording small_session() {
  auto model = sim::SyntheticModel::one_hot({"thumb", "index"}, 6.0, 50.0, 3);
  auto rec = sim::scripted_session(model, {"thumb", "index"}, kin::GuideTiming{}, 2.0);
  rec.session_id = "s1";
  rec.created_at = "2026-01-01T00:00:00Z";
  return rec;
}

Errc code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_session(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoError;
}

}  // namespace

TEST_CASE("guide samples sit on the 60 Hz grid") {
  CHECK(guide_time_us(0, 0) == 0);
  CHECK(guide_time_us(0, 1) == 16667);
  CHECK(guide_time_us(100, 60) == 1'000'100);
  CHECK(guide_time_us(0, 3) == 50000);
}

TEST_CASE("session round-trips through bytes and files") {
  auto rec = small_session();
  REQUIRE(rec.segments.size() == 2);
  CHECK(rec.segments[0].frames.size() == 223);
  CHECK(rec.segments[0].guide.size() == 120);
  auto bytes = serialize_session(rec);
  CHECK(deserialize_session(bytes) == rec);

  test::TempPath path(".mgr");
  save_session(rec, path.str());
  auto loaded = load_session(path.str());
  CHECK(loaded == rec);
  CHECK(loaded.frame_count() == rec.frame_count());
  CHECK(loaded.movements() == std::vector<std::string>{"thumb", "index"});
}

TEST_CASE("empty session round-trips") {
  SessionRecording rec;
  rec.session_id = "empty";
  CHECK(deserialize_session(serialize_session(rec)) == rec);
}

TEST_CASE("truncated file is corrupt") {
  auto bytes = serialize_session(small_session());
  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK(code_of(part) == Errc::CorruptFile);
  }
}

TEST_CASE("flipped byte fails the checksum") {
  auto bytes = serialize_session(small_session());
  bytes[bytes.size() - 100] ^= 0x01;
  CHECK(code_of(bytes) == Errc::CorruptFile);
}

TEST_CASE("wrong magic is corrupt") {
  auto bytes = serialize_session(small_session());
  bytes[0] = 'X';
  CHECK(code_of(bytes) == Errc::CorruptFile);
}

TEST_CASE("future schema version is reported as such") {
  auto bytes = serialize_session(small_session());
  const std::string needle = "\"schema_version\":1";
  auto it = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
  REQUIRE(it != bytes.end());
  *(it + static_cast<std::ptrdiff_t>(needle.size()) - 1) = '2';
  CHECK(code_of(bytes) == Errc::SchemaVersionMismatch);
}

TEST_CASE("put_segment replaces a movement in place") {
  auto rec = small_session();
  auto replacement = rec.segments[0];
  replacement.frames.resize(10);
  rec.put_segment(replacement);
  CHECK(rec.segments.size() == 2);
  CHECK(rec.movements() == std::vector<std::string>{"thumb", "index"});
  CHECK(rec.find("thumb")->frames.size() == 10);
  CHECK(rec.find("pinky") == nullptr);
}

TEST_CASE("guide values are stored as f32") {
  kin::HandState s{0.1, 1.0 / 3.0};
  auto q = quantize_f32(s);
  CHECK(q[0] == static_cast<double>(0.1f));
  CHECK(q[1] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
  CHECK(quantize_f32(q) == q);
}

TEST_CASE("missing file is an io error") {
  try {
    load_session("/nonexistent/dir/x.mgr");
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::IoError);
  }
}
