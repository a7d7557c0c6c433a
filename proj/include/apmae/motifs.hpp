#pragma once

// Synthetic attention patterns drawn from five motif families: diagonal
// bands, vertical stripes, block squares, repeated squares and near-uniform
// rows. Each pattern is a row-wise softmax over structured logits, so rows sum
// to one exactly like harvested attention.

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "apmae/pattern.hpp"
#include "apmae/rng.hpp"

namespace apmae {

enum class MotifFamily : std::uint8_t {
  DiagonalBands = 0,
  VerticalStripes = 1,
  BlockSquares = 2,
  RepeatedSquares = 3,
  NearUniform = 4,
};

inline constexpr std::size_t kMotifFamilyCount = 5;

inline constexpr std::array<std::string_view, kMotifFamilyCount> kMotifNames = {
    "diagonal-bands", "vertical-stripes", "block-squares", "repeated-squares", "near-uniform"};

inline std::string_view to_string(MotifFamily f) { return kMotifNames.at(static_cast<std::size_t>(f)); }

struct MotifOptions {
  double logit_noise = 0.1;
};

/// One pattern of the given family; per-sample parameters (band period,
/// stripe columns, block boundaries, ...) come from `rng`.
inline AttentionPattern motif_pattern(MotifFamily family, std::uint32_t n, Rng& rng, const MotifOptions& opt = {}) {
  std::vector<double> logits(AttentionPattern::cell_count(n), 0.0);
  auto L = [&](std::uint32_t i, std::uint32_t j) -> double& { return logits[AttentionPattern::index(i, j)]; };

  switch (family) {
    case MotifFamily::DiagonalBands: {
      // Local decay plus periodic off-diagonal bands.
      const double decay = rng.uniform(0.3, 0.8);
      const auto period = static_cast<std::uint32_t>(rng.between(4, 12));
      const double band = rng.uniform(3.0, 6.0);
      for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j <= i; ++j) {
          const std::uint32_t d = i - j;
          L(i, j) = -decay * std::min<std::uint32_t>(d, 8) + ((d % period == 0) ? band : 0.0);
        }
      break;
    }
    case MotifFamily::VerticalStripes: {
      // A few key positions every query attends to.
      const auto stripes = rng.between(2, 4);
      std::vector<std::uint32_t> cols;
      cols.push_back(0);
      for (std::int64_t s = 0; s < stripes; ++s) cols.push_back(static_cast<std::uint32_t>(rng.below(n)));
      const double strength = rng.uniform(5.0, 8.0);
      for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t c : cols)
          if (c <= i) L(i, c) += strength;
      break;
    }
    case MotifFamily::BlockSquares: {
      // Queries attend within their own segment; segment lengths vary.
      std::vector<std::uint32_t> segment(n);
      std::uint32_t id = 0;
      for (std::uint32_t i = 0; i < n;) {
        const auto len = static_cast<std::uint32_t>(rng.between(6, 20));
        for (std::uint32_t k = 0; k < len && i < n; ++k, ++i) segment[i] = id;
        ++id;
      }
      const double strength = rng.uniform(5.0, 8.0);
      for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j <= i; ++j)
          if (segment[i] == segment[j]) L(i, j) = strength;
      break;
    }
    case MotifFamily::RepeatedSquares: {
      // Fixed-size squares with a strong diagonal that repeats across squares.
      const auto size = static_cast<std::uint32_t>(rng.between(4, 10));
      const double square = rng.uniform(2.0, 4.0);
      const double diag = rng.uniform(4.0, 7.0);
      for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j <= i; ++j) {
          if (i / size == j / size) L(i, j) += square;
          if ((i - j) % size == 0 && i != j) L(i, j) += diag;
        }
      break;
    }
    case MotifFamily::NearUniform:
      for (auto& v : logits) v = rng.normal(0.0, 0.3);
      break;
  }

  AttentionPattern p;
  p.model_id = "motif";
  p.size = n;
  p.values.resize(logits.size());
  std::vector<double> row;
  for (std::uint32_t i = 0; i < n; ++i) {
    row.resize(i + 1);
    double mx = -1e300;
    for (std::uint32_t j = 0; j <= i; ++j) {
      row[j] = L(i, j) + opt.logit_noise * rng.normal();
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (auto& v : row) sum += (v = std::exp(v - mx));
    for (std::uint32_t j = 0; j <= i; ++j) p.at(i, j) = static_cast<float>(row[j] / sum);
  }
  p.meta.task = TaskKind::RandomSpan;
  p.meta.correct = true;
  return p;
}

struct MotifCorpus {
  std::vector<AttentionPattern> patterns;
  std::vector<MotifFamily> families;
};

/// `count` patterns cycling through `families` in a seeded random order.
inline MotifCorpus motif_corpus(std::size_t count, std::uint32_t n, std::uint64_t seed,
                                std::span<const MotifFamily> families = {}, const MotifOptions& opt = {}) {
  static constexpr std::array<MotifFamily, kMotifFamilyCount> kAll = {
      MotifFamily::DiagonalBands, MotifFamily::VerticalStripes, MotifFamily::BlockSquares,
      MotifFamily::RepeatedSquares, MotifFamily::NearUniform};
  if (families.empty()) families = kAll;
  Rng rng(seed);
  MotifCorpus corpus;
  corpus.patterns.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto family = families[rng.below(families.size())];
    auto p = motif_pattern(family, n, rng, opt);
    p.meta.sample_id = i;
    corpus.patterns.push_back(std::move(p));
    corpus.families.push_back(family);
  }
  return corpus;
}

}  // namespace apmae
