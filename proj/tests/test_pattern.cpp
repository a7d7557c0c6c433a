#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "apmae/pattern.hpp"
#include "apmae/pattern_store.hpp"
#include "apmae/rng.hpp"

namespace apmae {
namespace {

AttentionPattern random_pattern(std::uint32_t n, Rng& rng) {
  AttentionPattern p;
  p.model_id = "test-" + std::to_string(rng.below(100));
  p.layer = static_cast<std::uint32_t>(rng.below(30));
  p.head = static_cast<std::uint32_t>(rng.below(16));
  p.size = n;
  p.values.resize(AttentionPattern::cell_count(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    double sum = 0.0;
    std::vector<double> row(i + 1);
    for (auto& v : row) sum += (v = std::exp(3.0 * rng.normal()));
    for (std::uint32_t j = 0; j <= i; ++j) p.at(i, j) = static_cast<float>(row[j] / sum);
  }
  p.meta.task = static_cast<TaskKind>(rng.below(kTaskKindCount));
  p.meta.sample_id = rng.next_u64();
  if (p.meta.task != TaskKind::Noise) p.meta.correct = rng.bernoulli(0.5);
  return p;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("apmae_test_" + std::to_string(::getpid()) + "_" + name);
}

TEST(ScaleLog, Endpoints) {
  EXPECT_EQ(scale_log(0.0, 1e-6), 0.0);
  EXPECT_NEAR(scale_log(1.0, 1e-6), 1.0, 1e-15);
}

TEST(ScaleLog, HalfMatchesClosedForm) {
  // Closed form evaluated independently in double precision.
  EXPECT_NEAR(scale_log(0.5, 1e-6), 0.9498284100698472, 1e-12);
  EXPECT_NEAR(scale_log(0.5, 1e-6), 0.94983, 5e-6);
}

TEST(ScaleLog, DomainErrors) {
  EXPECT_THROW(scale_log(-0.1), DomainError);
  EXPECT_THROW(scale_log(1.5), DomainError);
  EXPECT_THROW(scale_log(0.5, 0.0), DomainError);
  EXPECT_THROW(scale_log(0.5, -1.0), DomainError);
}

TEST(ScaleLog, MonotoneAndInvertible) {
  Rng rng(7);
  for (int t = 0; t < 2000; ++t) {
    double a = rng.uniform(), b = rng.uniform();
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    EXPECT_LT(scale_log(a), scale_log(b));
    EXPECT_NEAR(unscale_log(scale_log(a)), a, 1e-6);
  }
}

TEST(ScaleLog, RowArgmaxInvariant) {
  Rng rng(3);
  const auto p = random_pattern(24, rng);
  const auto s = scaled_copy(p);
  for (std::uint32_t i = 0; i < p.size; ++i) {
    std::uint32_t ap = 0, as = 0;
    for (std::uint32_t j = 0; j <= i; ++j) {
      if (p.at(i, j) > p.at(i, ap)) ap = j;
      if (s.at(i, j) > s.at(i, as)) as = j;
    }
    EXPECT_EQ(ap, as);
  }
}

TEST(Patchify, FullGridHas36Patches) {
  Rng rng(1);
  const auto ps = patchify(random_pattern(256, rng), 32);
  EXPECT_EQ(ps.grid, 8u);
  EXPECT_EQ(ps.count(), 36u);
}

TEST(Patchify, DeskGridHas10Patches) {
  Rng rng(2);
  EXPECT_EQ(patchify(random_pattern(64, rng), 16).count(), 10u);
}

TEST(Patchify, DiagonalPaddingIsZeroAndInvalid) {
  Rng rng(4);
  const auto ps = patchify(random_pattern(64, rng), 16);
  ASSERT_EQ(ps.patches[0], (PatchIndex{0, 0}));
  const auto vals = ps.patch(0);
  const auto valid = ps.validity(0);
  for (std::uint32_t a = 0; a < 16; ++a) {
    for (std::uint32_t b = 0; b < 16; ++b) {
      const std::size_t cell = a * 16 + b;
      if (b > a) {
        EXPECT_EQ(valid[cell], 0);
        EXPECT_EQ(vals[cell], 0.0f);
      } else {
        EXPECT_EQ(valid[cell], 1);
      }
    }
  }
  // Off-diagonal patches are fully valid.
  for (std::size_t k = 0; k < ps.count(); ++k) {
    if (ps.patches[k].row == ps.patches[k].col) continue;
    for (auto v : ps.validity(k)) EXPECT_EQ(v, 1);
  }
}

TEST(Patchify, NonDivisibleIsConfigError) {
  Rng rng(5);
  EXPECT_THROW(patchify(random_pattern(20, rng), 6), ConfigError);
}

TEST(Patchify, DepatchifyIsExactInverse) {
  Rng rng(6);
  for (std::uint32_t n : {8u, 16u, 64u}) {
    for (std::uint32_t p : {2u, 4u, 8u}) {
      if (n % p) continue;
      const auto pat = random_pattern(n, rng);
      EXPECT_EQ(depatchify(patchify(pat, p)), pat.values);
    }
  }
}

TEST(SelectMask, DefaultRatio) {
  const auto sel = select_mask(36, 0.5, 11);
  EXPECT_EQ(sel.masked.size(), 18u);
  EXPECT_EQ(sel.visible.size(), 18u);
}

TEST(SelectMask, ZeroRatioMasksNothing) {
  EXPECT_TRUE(select_mask(36, 0.0, 1).masked.empty());
}

TEST(SelectMask, DeterministicSubsetAndPartition) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto a = select_mask(10, 0.5, seed);
    EXPECT_EQ(a, select_mask(10, 0.5, seed));
    std::vector<int> seen(10, 0);
    for (auto k : a.masked) ++seen[k];
    for (auto k : a.visible) ++seen[k];
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(SelectMask, RejectsBadRatio) { EXPECT_THROW(select_mask(10, 1.5, 0), ConfigError); }

TEST(Validate, RawRowsSumToOne) {
  Rng rng(8);
  auto p = random_pattern(16, rng);
  EXPECT_NO_THROW(validate_pattern(p));
  p.at(5, 2) += 0.01f;
  EXPECT_THROW(validate_pattern(p), ContractError);
}

TEST(Store, RoundTripThreePatterns) {
  Rng rng(9);
  std::vector<AttentionPattern> pats;
  for (int i = 0; i < 3; ++i) pats.push_back(random_pattern(32, rng));
  const auto path = temp_path("three.aptn");
  EXPECT_EQ(write_store(pats, path), 3u);
  EXPECT_EQ(read_store(path), pats);
  std::filesystem::remove(path);
}

TEST(Store, EmptyStoreIsHeaderOnly) {
  const auto path = temp_path("empty.aptn");
  write_store(std::span<const AttentionPattern>{}, path);
  EXPECT_EQ(std::filesystem::file_size(path), kStoreHeaderBytes);
  EXPECT_TRUE(read_store(path).empty());
  std::filesystem::remove(path);
}

TEST(Store, CorruptMagicIsFormatError) {
  Rng rng(10);
  std::vector<AttentionPattern> pats{random_pattern(8, rng)};
  const auto path = temp_path("corrupt.aptn");
  write_store(pats, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(1);
    f.put('X');
  }
  try {
    read_store(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 1u);
  }
  std::filesystem::remove(path);
}

TEST(Store, TruncatedFileNamesOffset) {
  Rng rng(11);
  std::vector<AttentionPattern> pats{random_pattern(8, rng), random_pattern(8, rng)};
  const auto path = temp_path("trunc.aptn");
  write_store(pats, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  try {
    read_store(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::uint64_t record = kStoreMetaBytes + 4 * AttentionPattern::cell_count(8);
    EXPECT_EQ(e.offset(), kStoreHeaderBytes + record);
  }
  std::filesystem::remove(path);
}

TEST(Store, RandomAccessMatchesStreaming) {
  Rng rng(12);
  std::vector<AttentionPattern> pats;
  for (int i = 0; i < 7; ++i) pats.push_back(random_pattern(16, rng));
  const auto path = temp_path("ra.aptn");
  write_store(pats, path);
  PatternReader reader(path);
  EXPECT_EQ(reader.read_at(4), pats[4]);
  EXPECT_EQ(reader.read_at(0), pats[0]);
  std::filesystem::remove(path);
}

TEST(Store, PropertyRoundTripRandomStores) {
  Rng rng(13);
  const auto path = temp_path("prop.aptn");
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::uint32_t>(1 + rng.below(20));
    std::vector<AttentionPattern> pats;
    const auto count = rng.below(6);
    for (std::uint64_t i = 0; i < count; ++i) {
      auto p = random_pattern(n, rng);
      if (rng.bernoulli(0.3)) p = scaled_copy(p);
      pats.push_back(std::move(p));
    }
    write_store(pats, path, 1e-6 * (1 + static_cast<double>(rng.below(5))));
    ASSERT_EQ(read_store(path), pats) << "trial " << trial;
  }
  std::filesystem::remove(path);
}

TEST(Store, MismatchedSizeRejected) {
  Rng rng(14);
  const auto path = temp_path("mismatch.aptn");
  PatternWriter w(path, 8);
  EXPECT_THROW(w.append(random_pattern(16, rng)), ContractError);
}

}  // namespace
}  // namespace apmae
