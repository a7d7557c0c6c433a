#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apmae/errors.hpp"
#include "apmae/rng.hpp"
#include "apmae/task_kind.hpp"

namespace apmae {

inline constexpr double kDefaultScaleEps = 1e-6;

struct PatternMeta {
  TaskKind task = TaskKind::RandomSpan;
  std::uint64_t sample_id = 0;
  /// First-token correctness of the harvesting model; absent for NOISE.
  std::optional<bool> correct;
  /// Values are in log-scaled space.
  bool scaled = false;

  bool operator==(const PatternMeta&) const = default;
};

/// Post-softmax causal attention matrix of one head. Only the lower triangle
/// (j <= i) is stored, row-major.
struct AttentionPattern {
  std::string model_id;
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  std::uint32_t size = 0;
  std::vector<float> values;
  PatternMeta meta;

  static constexpr std::size_t cell_count(std::size_t n) { return n * (n + 1) / 2; }
  static constexpr std::size_t index(std::size_t i, std::size_t j) { return i * (i + 1) / 2 + j; }

  float at(std::size_t i, std::size_t j) const { return values[index(i, j)]; }
  float& at(std::size_t i, std::size_t j) { return values[index(i, j)]; }

  bool operator==(const AttentionPattern&) const = default;
};

/// Checks cell count and value range; raw patterns must also have unit rows.
inline void validate_pattern(const AttentionPattern& p, double row_tolerance = 1e-4) {
  if (p.values.size() != AttentionPattern::cell_count(p.size)) {
    throw ContractError("pattern of size " + std::to_string(p.size) + " has " +
                        std::to_string(p.values.size()) + " cells");
  }
  for (float v : p.values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("pattern value outside [0,1]");
  }
  if (p.meta.scaled) return;
  for (std::size_t i = 0; i < p.size; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j <= i; ++j) sum += p.at(i, j);
    if (std::abs(sum - 1.0) > row_tolerance) {
      throw ContractError("row " + std::to_string(i) + " of raw pattern sums to " + std::to_string(sum));
    }
  }
}

// ---------------------------------------------------------------------------
// Logarithmic scaling

/// Maps [0,1] onto [0,1] through ln(v + eps), anchored at both endpoints.
inline double scale_log(double v, double eps = kDefaultScaleEps) {
  if (!(eps > 0.0)) throw DomainError("scale_log: eps must be positive");
  if (!(v >= 0.0 && v <= 1.0)) throw DomainError("scale_log: value outside [0,1]");
  const double lo = std::log(eps);
  return (std::log(v + eps) - lo) / (std::log1p(eps) - lo);
}

inline double unscale_log(double s, double eps = kDefaultScaleEps) {
  if (!(eps > 0.0)) throw DomainError("unscale_log: eps must be positive");
  if (!(s >= 0.0 && s <= 1.0)) throw DomainError("unscale_log: value outside [0,1]");
  const double lo = std::log(eps);
  const double v = std::exp(s * (std::log1p(eps) - lo) + lo) - eps;
  return std::clamp(v, 0.0, 1.0);
}

inline AttentionPattern scaled_copy(const AttentionPattern& p, double eps = kDefaultScaleEps) {
  if (p.meta.scaled) return p;
  AttentionPattern out = p;
  for (float& v : out.values) v = static_cast<float>(scale_log(v, eps));
  out.meta.scaled = true;
  return out;
}

// ---------------------------------------------------------------------------
// Patches

struct PatchIndex {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  bool operator==(const PatchIndex&) const = default;
};

/// Lower-triangular patch grid of one pattern. Cells above the token diagonal
/// inside diagonal patches hold 0 and are marked invalid.
struct PatchSet {
  std::uint32_t pattern_size = 0;
  std::uint32_t patch_size = 0;
  std::uint32_t grid = 0;
  bool scaled = false;
  std::vector<PatchIndex> patches;
  std::vector<float> values;         // patches.size() * patch_size^2
  std::vector<std::uint8_t> valid;   // same layout as values

  std::size_t patch_cells() const { return static_cast<std::size_t>(patch_size) * patch_size; }
  std::size_t count() const { return patches.size(); }

  std::span<const float> patch(std::size_t k) const {
    return {values.data() + k * patch_cells(), patch_cells()};
  }
  std::span<float> patch(std::size_t k) { return {values.data() + k * patch_cells(), patch_cells()}; }
  std::span<const std::uint8_t> validity(std::size_t k) const {
    return {valid.data() + k * patch_cells(), patch_cells()};
  }
};

inline constexpr std::size_t kept_patch_count(std::size_t grid) { return grid * (grid + 1) / 2; }

/// Row-major (r, c) with c <= r.
inline std::vector<PatchIndex> lower_patch_grid(std::uint32_t grid) {
  std::vector<PatchIndex> out;
  out.reserve(kept_patch_count(grid));
  for (std::uint32_t r = 0; r < grid; ++r)
    for (std::uint32_t c = 0; c <= r; ++c) out.push_back({r, c});
  return out;
}

inline PatchSet patchify(const AttentionPattern& p, std::uint32_t patch_size) {
  if (patch_size == 0 || p.size % patch_size != 0) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " does not divide pattern size " +
                      std::to_string(p.size));
  }
  if (p.values.size() != AttentionPattern::cell_count(p.size)) {
    throw ContractError("pattern cell count does not match its size");
  }
  PatchSet ps;
  ps.pattern_size = p.size;
  ps.patch_size = patch_size;
  ps.grid = p.size / patch_size;
  ps.scaled = p.meta.scaled;
  ps.patches = lower_patch_grid(ps.grid);
  const std::size_t cells = ps.patch_cells();
  ps.values.assign(ps.patches.size() * cells, 0.0f);
  ps.valid.assign(ps.patches.size() * cells, 0);
  for (std::size_t k = 0; k < ps.patches.size(); ++k) {
    const auto [r, c] = ps.patches[k];
    for (std::uint32_t a = 0; a < patch_size; ++a) {
      const std::size_t i = static_cast<std::size_t>(r) * patch_size + a;
      for (std::uint32_t b = 0; b < patch_size; ++b) {
        const std::size_t j = static_cast<std::size_t>(c) * patch_size + b;
        if (j > i) continue;
        const std::size_t cell = k * cells + static_cast<std::size_t>(a) * patch_size + b;
        ps.values[cell] = p.at(i, j);
        ps.valid[cell] = 1;
      }
    }
  }
  return ps;
}

/// Reassembles the lower triangle from a PatchSet.
inline std::vector<float> depatchify(const PatchSet& ps) {
  std::vector<float> out(AttentionPattern::cell_count(ps.pattern_size), 0.0f);
  const std::size_t cells = ps.patch_cells();
  for (std::size_t k = 0; k < ps.patches.size(); ++k) {
    const auto [r, c] = ps.patches[k];
    for (std::uint32_t a = 0; a < ps.patch_size; ++a) {
      const std::size_t i = static_cast<std::size_t>(r) * ps.patch_size + a;
      for (std::uint32_t b = 0; b < ps.patch_size; ++b) {
        const std::size_t j = static_cast<std::size_t>(c) * ps.patch_size + b;
        if (j > i) continue;
        out[AttentionPattern::index(i, j)] = ps.values[k * cells + static_cast<std::size_t>(a) * ps.patch_size + b];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masking

struct MaskSelection {
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> masked;   // ascending
  std::vector<std::uint32_t> visible;  // ascending

  bool operator==(const MaskSelection&) const = default;
};

inline std::size_t masked_count(std::size_t patch_count, double mask_ratio) {
  return static_cast<std::size_t>(std::llround(mask_ratio * static_cast<double>(patch_count)));
}

inline MaskSelection select_mask(std::size_t patch_count, double mask_ratio, std::uint64_t seed) {
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw ConfigError("mask ratio outside [0,1]");
  std::vector<std::uint32_t> order(patch_count);
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const std::size_t m = masked_count(patch_count, mask_ratio);
  MaskSelection sel;
  sel.seed = seed;
  sel.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  sel.visible.assign(order.begin() + static_cast<std::ptrdiff_t>(m), order.end());
  std::sort(sel.masked.begin(), sel.masked.end());
  std::sort(sel.visible.begin(), sel.visible.end());
  return sel;
}

inline MaskSelection select_mask(const PatchSet& ps, double mask_ratio, std::uint64_t seed) {
  return select_mask(ps.count(), mask_ratio, seed);
}

}  // namespace apmae
