#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "relxforge/crc64.hpp"
#include "relxforge/error.hpp"
#include "relxforge/io.hpp"
#include "relxforge/parallel.hpp"
#include "relxforge/rng.hpp"
#include "relxforge/utf8.hpp"

namespace {

using relxforge::Rng;

// Straight transcription of the public-domain reference generators.
struct RefXoshiro {
  std::uint64_t s[4];
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  explicit RefXoshiro(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s) {
      std::uint64_t z = (x += 0x9e3779b97f4a7c15);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9;
      z = (z ^ (z >> 27)) * 0x94d049bb133111eb;
      w = z ^ (z >> 31);
    }
  }
  std::uint64_t next() {
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }
};

TEST(SplitMix, KnownFirstOutputs) {
  std::uint64_t st = 0;
  EXPECT_EQ(relxforge::splitmix64(st), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(relxforge::splitmix64(st), 0x6E789E6AA1B965F4ULL);
}

TEST(RngTest, MatchesReferenceXoshiro) {
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xDEADBEEFULL}) {
    Rng r(seed);
    RefXoshiro ref(seed);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(r.next(), ref.next());
  }
}

TEST(RngTest, StateRoundTripReproducesStream) {
  Rng a(5);
  for (int i = 0; i < 17; ++i) a.next();
  Rng b;
  b.set_state(a.state());
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next(), b.next());
}

TEST(RngTest, MixSeedSeparatesStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t m = 0; m < 20; ++m) {
    for (std::uint64_t i = 0; i < 50; ++i) seen.insert(relxforge::mix_seed(m, i));
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(relxforge::mix_seed(3, 4), relxforge::mix_seed(3, 4));
}

TEST(RngTest, BelowIsInRangeAndRoughlyUniform) {
  Rng r(9);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  // Chi-square with 6 degrees of freedom; 22.46 is the 0.999 quantile.
  double chi = 0;
  for (int c : counts) chi += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  EXPECT_LT(chi, 22.46);
  EXPECT_EQ(r.below(1), 0u);
}

TEST(RngTest, NormalMoments) {
  Rng r(10);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal(1.5, 2.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  // Standard error of the mean is 2/sqrt(n) ~ 0.0045.
  EXPECT_NEAR(mean, 1.5, 0.03);
  EXPECT_NEAR(var, 4.0, 0.08);
}

TEST(RngTest, ShuffleIsAPermutation) {
  Rng r(11);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(std::span<int>(v));
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(Crc64Test, StandardCheckValue) {
  // CRC-64/XZ catalogue check value.
  EXPECT_EQ(relxforge::crc64("123456789"), 0x995DC9BBDF1939FAULL);
  EXPECT_EQ(relxforge::crc64(""), 0u);
}

TEST(Crc64Test, IncrementalEqualsOneShot) {
  relxforge::Crc64 c;
  c.update("12345");
  c.update("6789");
  EXPECT_EQ(c.value(), relxforge::crc64("123456789"));
}

TEST(Crc64Test, FileMatchesString) {
  const auto path = std::filesystem::temp_directory_path() / "relxforge_crc_test.bin";
  relxforge::io::write_file(path.string(), "123456789");
  EXPECT_EQ(relxforge::crc64_file(path.string()), 0x995DC9BBDF1939FAULL);
  std::filesystem::remove(path);
}

TEST(Utf8Test, RoundTripAndLength) {
  const std::string s = "a\xC3\xA9\xE2\x82\xAC\xF0\x9F\x98\x80";  // a é € 😀
  const auto cps = relxforge::utf8::decode(s);
  ASSERT_EQ(cps.size(), 4u);
  EXPECT_EQ(cps[1], U'é');
  EXPECT_EQ(cps[2], U'€');
  EXPECT_EQ(cps[3], U'\U0001F600');
  EXPECT_EQ(relxforge::utf8::encode(cps), s);
  EXPECT_EQ(relxforge::utf8::length(s), 4u);
}

TEST(Utf8Test, InvalidBytesBecomeReplacement) {
  const auto cps = relxforge::utf8::decode("a\xFF" "b\xC3");
  ASSERT_EQ(cps.size(), 4u);
  EXPECT_EQ(cps[1], relxforge::utf8::kReplacement);
  EXPECT_EQ(cps[3], relxforge::utf8::kReplacement);
}

TEST(Utf8Test, CaseClasses) {
  using namespace relxforge::utf8;
  EXPECT_TRUE(is_upper(U'Ç'));
  EXPECT_TRUE(is_lower(U'ç'));
  EXPECT_EQ(to_upper(U'ç'), U'Ç');
  EXPECT_EQ(to_upper(U'ı'), U'I');
  EXPECT_TRUE(is_upper(U'İ'));
  EXPECT_EQ(to_upper(U'ş'), U'Ş');
  EXPECT_TRUE(is_punct(U'¿'));
  EXPECT_FALSE(is_punct(U'x'));
}

TEST(IoTest, SplitLinesHandlesCrlfAndTrailingNewline) {
  const auto lines = relxforge::io::split_lines("a\r\nb\n\nc\n");
  const std::vector<std::string> expect{"a", "b", "", "c"};
  EXPECT_EQ(lines, expect);
  EXPECT_EQ(relxforge::io::split("x\t\ty", '\t').size(), 3u);
  EXPECT_EQ(relxforge::io::trim("  q \n"), "q");
}

TEST(IoTest, MissingFileIsIOError) {
  try {
    relxforge::io::read_file("/nonexistent/relxforge/file");
    FAIL();
  } catch (const relxforge::Error& e) {
    EXPECT_EQ(e.code(), relxforge::ErrorCode::kIOError);
  }
}

TEST(ParallelTest, ResultsIndependentOfWorkerCount) {
  auto f = [](std::size_t i) { return static_cast<int>(i * i % 97); };
  EXPECT_EQ(relxforge::parallel_map(1000, 1, f), relxforge::parallel_map(1000, 8, f));
}

TEST(ParallelTest, ExceptionsPropagate) {
  auto f = [](std::size_t i) -> int {
    if (i == 37) throw relxforge::Error(relxforge::ErrorCode::kMalformedRecord, "x");
    return 0;
  };
  EXPECT_THROW(relxforge::parallel_map(100, 4, f), relxforge::Error);
}

}  // namespace
