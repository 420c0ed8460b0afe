#include <doctest.h>

#include <cmath>
#include <random>

#include "myo/dsp.hpp"
#include "myo/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace myo;

namespace {

SignalMatrix random_signal(std::mt19937_64& rng, std::size_t T) {
  SignalMatrix m(32, T);
  std::uniform_int_distribution<int> d(-32768, 32767);
  for (auto& v : m.data()) v = d(rng);
  return m;
}

double rel_err(double a, double b) {
  double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("default layout places channel k at (k mod 16, k div 16)") {
  dsp::GridLayout layout;
  for (std::size_t k = 0; k < 32; ++k) {
    CHECK(layout.cell(k) == dsp::GridCell{k % 16, k / 16});
    CHECK(layout.channel(k % 16, k / 16) == k);
  }
}

TEST_CASE("layout must be a bijection") {
  std::array<dsp::GridCell, kChannels> cells{};
  for (std::size_t k = 0; k < 32; ++k) cells[k] = {k % 16, k / 16};
  cells[1] = cells[0];
  CHECK_THROWS_AS(dsp::GridLayout{cells}, Error);
}

TEST_CASE("grid reshape round-trips") {
  std::mt19937_64 rng(1);
  auto m = random_signal(rng, 36);
  auto g = dsp::to_grid(m);
  CHECK(g(3, 1, 7) == m(19, 7));
  CHECK(dsp::from_grid(g) == m);
}

TEST_CASE("to_grid rejects the wrong channel count") {
  SignalMatrix m(31, 10);
  try {
    dsp::to_grid(m);
    FAIL("expected WrongShape");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::WrongShape);
  }
}

TEST_CASE("padding wraps rows and zeroes columns") {
  std::mt19937_64 rng(2);
  auto g = dsp::to_grid(random_signal(rng, 4));
  auto p = dsp::pad_grid(g);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(p(0, c + 1, t) == g(15, c, t));
      CHECK(p(17, c + 1, t) == g(0, c, t));
    }
    for (std::size_t r = 0; r < 18; ++r) {
      CHECK(p(r, 0, t) == 0.0);
      CHECK(p(r, 3, t) == 0.0);
    }
  }
}

TEST_CASE("features match the straight-line reference on random buffers") {
  std::mt19937_64 rng(1234);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto m = random_signal(rng, 360);
    std::vector<double> flat(m.data().begin(), m.data().end());
    auto ref = oracle::rms_features(flat, 360);
    auto got = dsp::extract_features(m);
    for (std::size_t k = 0; k < 32; ++k) worst = std::max(worst, rel_err(got.rms[k], ref[k]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("constant input gives 0.875 |c|") {
  for (double c : {1.0, -7.0, 1000.0, -32768.0, 32767.0}) {
    SignalMatrix m(32, 360);
    for (auto& v : m.data()) v = c;
    auto f = dsp::extract_features(m);
    for (double r : f.rms) CHECK(std::abs(r - 0.875 * std::abs(c)) <= 1e-12 * std::abs(c));
  }
}

TEST_CASE("single impulse spreads to its four neighbours") {
  SignalMatrix m(32, 1);
  m(0, 0) = 8.0;  // row 0, column 0
  auto g = dsp::spatial_filter(dsp::to_grid(m));
  CHECK(g(0, 0, 0) == 1.0);
  CHECK(g(1, 0, 0) == 2.0);
  CHECK(g(15, 0, 0) == 2.0);  // wrapped
  CHECK(g(0, 1, 0) == 2.0);
  CHECK(g(2, 0, 0) == 0.0);
  CHECK(g(1, 1, 0) == 0.0);
}

TEST_CASE("features are invariant to a circular row shift of the input") {
  std::mt19937_64 rng(9);
  auto m = random_signal(rng, 50);
  SignalMatrix shifted(32, 50);
  for (std::size_t k = 0; k < 32; ++k) {
    std::size_t r = k % 16, c = k / 16;
    std::size_t dst = c * 16 + (r + 3) % 16;
    for (std::size_t t = 0; t < 50; ++t) shifted(dst, t) = m(k, t);
  }
  auto a = dsp::extract_features(m);
  auto b = dsp::extract_features(shifted);
  for (std::size_t k = 0; k < 32; ++k) {
    std::size_t r = k % 16, c = k / 16;
    CHECK(b.rms[c * 16 + (r + 3) % 16] == doctest::Approx(a.rms[k]).epsilon(1e-12));
  }
}

TEST_CASE("buffer features equal matrix features and carry the newest timestamp") {
  std::mt19937_64 rng(11);
  FrameBuffer buf;
  for (std::uint32_t s = 0; s < 20; ++s) {
    auto f = test::random_frame(rng);
    f.seq = s;
    f.t_us = s * 9000;
    buf.push(f);
  }
  auto a = dsp::extract_features(buf);
  auto b = dsp::extract_features(buf.concat());
  CHECK(a.rms == b.rms);
  CHECK(a.t_us == 19 * 9000);
}

TEST_CASE("partial buffer is rejected") {
  FrameBuffer buf;
  buf.push(test::frame_at(0));
  try {
    dsp::extract_features(buf);
    FAIL("expected NotFull");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NotFull);
  }
}
