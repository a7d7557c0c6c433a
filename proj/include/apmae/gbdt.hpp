#pragma once

// Correctness classifier over per-head cluster labels: categorical features
// encoded with ordered target statistics, logloss gradient-boosted trees, k-fold
// cross-validation, exact tree Shapley values and per-head importance.
//
// Feature table file layout (little-endian):
//   char[4] "APFT", u16 version, u32 header length, JSON header
//   {"columns": [[layer, head], ...], "rows": n}
//   u64 sample_id[n], u8 label[n], then per column i32 cell[n]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "apmae/binary_io.hpp"
#include "apmae/cluster.hpp"
#include "apmae/errors.hpp"
#include "apmae/lm.hpp"
#include "apmae/rng.hpp"

namespace apmae {

/// Cell value for a head with no pattern for that sample.
inline constexpr std::int32_t kMissing = -2;

// ---------------------------------------------------------------------------
// Feature tables

struct FeatureTable {
  std::vector<HeadKey> columns;
  std::vector<std::uint64_t> sample_ids;
  std::vector<std::uint8_t> labels;                 // 1 = correct
  std::vector<std::vector<std::int32_t>> cells;     // cells[column][row]

  std::size_t rows() const { return labels.size(); }
  std::size_t cols() const { return columns.size(); }
  std::int32_t at(std::size_t row, std::size_t col) const { return cells[col][row]; }

  void validate() const {
    if (sample_ids.size() != labels.size()) throw ContractError("feature table ids and labels differ in length");
    if (cells.size() != columns.size()) throw ContractError("feature table column count mismatch");
    for (const auto& c : cells)
      if (c.size() != labels.size()) throw ContractError("feature table column length mismatch");
    for (auto l : labels)
      if (l > 1) throw ContractError("feature table labels must be 0 or 1");
  }

  friend bool operator==(const FeatureTable&, const FeatureTable&) = default;
};

/// One row per harvested sample with a correctness label (optionally one task),
/// one column per head seen in the assignments. Absent cells hold kMissing.
inline FeatureTable build_feature_table(std::span<const Assignment> assignments, std::span<const HarvestRecord> records,
                                        std::optional<TaskKind> task = std::nullopt) {
  FeatureTable t;
  std::map<HeadKey, std::size_t> col_of;
  for (const auto& a : assignments) col_of.emplace(a.head, 0);
  for (auto& [k, v] : col_of) {
    v = t.columns.size();
    t.columns.push_back(k);
  }
  std::vector<const HarvestRecord*> rows;
  for (const auto& r : records)
    if (r.correct && (!task || r.task == *task)) rows.push_back(&r);
  std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->instance_id < b->instance_id; });
  std::map<std::uint64_t, std::size_t> row_of;
  for (auto* r : rows) {
    if (!row_of.emplace(r->instance_id, t.sample_ids.size()).second)
      throw ContractError("duplicate sample id " + std::to_string(r->instance_id));
    t.sample_ids.push_back(r->instance_id);
    t.labels.push_back(*r->correct ? 1 : 0);
  }
  t.cells.assign(t.columns.size(), std::vector<std::int32_t>(rows.size(), kMissing));
  for (const auto& a : assignments) {
    const auto it = row_of.find(a.sample_id);
    if (it != row_of.end()) t.cells[col_of[a.head]][it->second] = a.label;
  }
  return t;
}

/// Keeps an equal number of rows per label, drawn per seed; row order preserved.
inline FeatureTable balance_table(const FeatureTable& t, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t r = 0; r < t.rows(); ++r) (t.labels[r] ? pos : neg).push_back(r);
  const std::size_t m = std::min(pos.size(), neg.size());
  Rng rng(seed);
  rng.shuffle(pos.begin(), pos.end());
  rng.shuffle(neg.begin(), neg.end());
  std::vector<std::size_t> keep(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(m));
  keep.insert(keep.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(keep.begin(), keep.end());
  FeatureTable out;
  out.columns = t.columns;
  out.cells.assign(t.cols(), {});
  for (auto r : keep) {
    out.sample_ids.push_back(t.sample_ids[r]);
    out.labels.push_back(t.labels[r]);
    for (std::size_t c = 0; c < t.cols(); ++c) out.cells[c].push_back(t.at(r, c));
  }
  return out;
}

inline constexpr char kTableMagic[4] = {'A', 'P', 'F', 'T'};
inline constexpr std::uint16_t kTableVersion = 1;

inline std::vector<unsigned char> encode_feature_table(const FeatureTable& t) {
  t.validate();
  nlohmann::json header;
  header["rows"] = t.rows();
  header["columns"] = nlohmann::json::array();
  for (const auto& k : t.columns) header["columns"].push_back({k.layer, k.head});
  const auto h = header.dump();
  io::ByteWriter w;
  w.put_bytes(std::string_view(kTableMagic, 4));
  w.put<std::uint16_t>(kTableVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(h.size()));
  w.put_bytes(h);
  w.put_array<std::uint64_t>(t.sample_ids);
  w.put_array<std::uint8_t>(t.labels);
  for (const auto& c : t.cells) w.put_array<std::int32_t>(c);
  return std::move(w.bytes());
}

inline FeatureTable decode_feature_table(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes);
  for (int i = 0; i < 4; ++i)
    if (r.get<char>() != kTableMagic[i]) throw FormatError("bad feature table magic", static_cast<std::uint64_t>(i));
  if (r.get<std::uint16_t>() != kTableVersion) throw FormatError("unsupported feature table version", 4);
  const auto hlen = r.get<std::uint32_t>();
  const auto hpos = r.offset();
  if (hlen > r.remaining()) throw FormatError("feature table header extends past end of file", hpos);
  nlohmann::json header;
  FeatureTable t;
  std::size_t rows = 0;
  try {
    header = nlohmann::json::parse(r.get_fixed_string(hlen));
    rows = header.at("rows").get<std::size_t>();
    for (const auto& c : header.at("columns")) t.columns.push_back({c.at(0).get<std::uint32_t>(), c.at(1).get<std::uint32_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad feature table header: ") + e.what(), hpos);
  }
  const std::uint64_t need = rows * (8 + 1) + rows * 4 * t.columns.size();
  if (need != r.remaining()) throw FormatError("feature table body size does not match header", r.offset());
  t.sample_ids.resize(rows);
  r.get_array<std::uint64_t>(t.sample_ids);
  t.labels.resize(rows);
  r.get_array<std::uint8_t>(t.labels);
  t.cells.assign(t.columns.size(), std::vector<std::int32_t>(rows));
  for (auto& c : t.cells) r.get_array<std::int32_t>(c);
  for (std::size_t i = 0; i < rows; ++i)
    if (t.labels[i] > 1) throw FormatError("feature table label must be 0 or 1", hpos + hlen + rows * 8 + i);
  return t;
}

inline void save_feature_table(const FeatureTable& t, const std::filesystem::path& path) {
  io::atomic_write_bytes(path, encode_feature_table(t));
}

inline FeatureTable load_feature_table(const std::filesystem::path& path) {
  return decode_feature_table(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Configuration

struct GBDTConfig {
  std::uint32_t trees = 200;
  std::uint32_t depth = 6;
  double shrinkage = 0.1;
  double l2 = 1.0;
  std::uint32_t patience = 20;
  std::uint32_t borders = 32;
  std::uint32_t folds = 10;
  double min_child_hessian = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (depth == 0 || depth > 16) throw ConfigError("tree depth must lie in 1..16");
    if (!(shrinkage > 0)) throw ConfigError("shrinkage must be positive");
    if (l2 < 0) throw ConfigError("l2 must be non-negative");
    if (borders == 0 || borders > 254) throw ConfigError("borders must lie in 1..254");
    if (folds < 3) throw ConfigError("cross-validation needs at least 3 folds");
  }
  bool operator==(const GBDTConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GBDTConfig, trees, depth, shrinkage, l2, patience, borders, folds,
                                   min_child_hessian, seed)

// ---------------------------------------------------------------------------
// Ordered target statistics

/// Leakage-free codes for rows listed in `order`: each row sees only the labels
/// of rows earlier in the order with the same category.
inline std::vector<double> ordered_codes(std::span<const std::int32_t> categories, std::span<const std::uint8_t> labels,
                                         std::span<const std::size_t> order, double prior) {
  std::map<std::int32_t, std::pair<double, double>> acc;
  std::vector<double> out(categories.size(), prior);
  for (auto r : order) {
    auto& [sum, count] = acc[categories[r]];
    out[r] = (sum + prior) / (count + 1.0);
    sum += labels[r];
    count += 1.0;
  }
  return out;
}

/// Codes from full statistics of the given rows, used at inference time.
inline std::map<std::int32_t, double> full_codes(std::span<const std::int32_t> categories,
                                                 std::span<const std::uint8_t> labels, std::span<const std::size_t> rows,
                                                 double prior) {
  std::map<std::int32_t, std::pair<double, double>> acc;
  for (auto r : rows) {
    acc[categories[r]].first += labels[r];
    acc[categories[r]].second += 1.0;
  }
  std::map<std::int32_t, double> out;
  for (const auto& [k, v] : acc) out[k] = (v.first + prior) / (v.second + 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Trees

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;
  double cover = 0.0;
  bool operator==(const TreeNode&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TreeNode, feature, threshold, left, right, value, cover)

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0)
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold ? nodes[i].left
                                                                                                       : nodes[i].right);
    return nodes[i].value;
  }

  double expected_value() const {
    double s = 0;
    for (const auto& n : nodes)
      if (n.feature < 0) s += n.value * n.cover;
    return nodes.empty() || nodes[0].cover == 0 ? 0.0 : s / nodes[0].cover;
  }

  bool operator==(const Tree&) const = default;
};

inline void to_json(nlohmann::json& j, const Tree& t) { j = t.nodes; }
inline void from_json(const nlohmann::json& j, Tree& t) { j.get_to(t.nodes); }

namespace detail {

inline std::vector<double> make_borders(std::vector<double> values, std::size_t max_borders) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> b;
  if (values.size() <= 1) return b;
  if (values.size() <= max_borders + 1) {
    for (std::size_t i = 1; i < values.size(); ++i) b.push_back(0.5 * (values[i - 1] + values[i]));
    return b;
  }
  for (std::size_t k = 1; k <= max_borders; ++k) {
    const std::size_t i = k * values.size() / (max_borders + 1);
    const double v = 0.5 * (values[i - 1] + values[i]);
    if (b.empty() || v > b.back()) b.push_back(v);
  }
  return b;
}

struct Hist {
  double g = 0, h = 0;
  std::size_t n = 0;
};

struct TreeBuilder {
  const std::vector<std::vector<std::uint8_t>>& bins;  // bins[feature][row]
  const std::vector<std::vector<double>>& borders;
  std::span<const double> grad;
  std::span<const double> hess;
  const GBDTConfig& cfg;
  Tree tree;

  std::int32_t build(std::vector<std::size_t>& rows, std::uint32_t depth) {
    const auto id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    double G = 0, H = 0;
    for (auto r : rows) {
      G += grad[r];
      H += hess[r];
    }
    tree.nodes[static_cast<std::size_t>(id)].cover = static_cast<double>(rows.size());
    tree.nodes[static_cast<std::size_t>(id)].value = -G / (H + cfg.l2) * cfg.shrinkage;
    if (depth >= cfg.depth || rows.size() < 2) return id;

    const double parent_score = G * G / (H + cfg.l2);
    double best_gain = 1e-12;
    int best_f = -1, best_b = -1;
    std::vector<Hist> hist;
    for (std::size_t f = 0; f < bins.size(); ++f) {
      const auto nb = borders[f].size();
      if (nb == 0) continue;
      hist.assign(nb + 1, Hist{});
      for (auto r : rows) {
        auto& e = hist[bins[f][r]];
        e.g += grad[r];
        e.h += hess[r];
        ++e.n;
      }
      Hist left;
      for (std::size_t b = 0; b < nb; ++b) {
        left.g += hist[b].g;
        left.h += hist[b].h;
        left.n += hist[b].n;
        const double rg = G - left.g, rh = H - left.h;
        if (left.n == 0 || left.n == rows.size()) continue;
        if (left.h < cfg.min_child_hessian || rh < cfg.min_child_hessian) continue;
        const double gain = left.g * left.g / (left.h + cfg.l2) + rg * rg / (rh + cfg.l2) - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = static_cast<int>(f);
          best_b = static_cast<int>(b);
        }
      }
    }
    if (best_f < 0) return id;
    std::vector<std::size_t> lrows, rrows;
    for (auto r : rows) (bins[static_cast<std::size_t>(best_f)][r] <= best_b ? lrows : rrows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const auto l = build(lrows, depth + 1);
    const auto rr = build(rrows, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best_f;
    node.threshold = borders[static_cast<std::size_t>(best_f)][static_cast<std::size_t>(best_b)];
    node.left = l;
    node.right = rr;
    node.value = 0.0;
    return id;
  }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double logloss(std::span<const double> score, std::span<const std::uint8_t> y) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(sigmoid(score[i]), 1e-15, 1 - 1e-15);
    s -= y[i] ? std::log(p) : std::log(1 - p);
  }
  return y.empty() ? 0.0 : s / static_cast<double>(y.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model

struct GBDTModel {
  std::vector<HeadKey> columns;
  std::vector<std::vector<std::uint32_t>> groups;      // model feature -> identical raw columns
  std::vector<std::map<std::int32_t, double>> codes;   // per model feature
  double prior = 0.5;
  double base = 0.0;
  std::vector<Tree> trees;
  GBDTConfig config;

  std::size_t features() const { return groups.size(); }

  std::vector<double> encode_row(std::span<const std::int32_t> raw) const {
    if (raw.size() != columns.size())
      throw ContractError("row has " + std::to_string(raw.size()) + " cells, model expects " + std::to_string(columns.size()));
    std::vector<double> x(groups.size());
    for (std::size_t f = 0; f < groups.size(); ++f) {
      const auto it = codes[f].find(raw[groups[f][0]]);
      x[f] = it == codes[f].end() ? prior : it->second;
    }
    return x;
  }

  double raw_score(std::span<const std::int32_t> raw) const {
    const auto x = encode_row(raw);
    double s = base;
    for (const auto& t : trees) s += t.predict(x);
    return s;
  }

  double probability(std::span<const std::int32_t> raw) const { return detail::sigmoid(raw_score(raw)); }

  bool operator==(const GBDTModel&) const = default;
};

inline void to_json(nlohmann::json& j, const GBDTModel& m) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& k : m.columns) cols.push_back({k.layer, k.head});
  nlohmann::json codes = nlohmann::json::array();
  for (const auto& c : m.codes) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [k, v] : c) pairs.push_back({k, v});
    codes.push_back(pairs);
  }
  j = {{"columns", cols}, {"groups", m.groups}, {"codes", codes},   {"prior", m.prior},
       {"base", m.base},  {"trees", m.trees},   {"config", m.config}};
}

inline void from_json(const nlohmann::json& j, GBDTModel& m) {
  m.columns.clear();
  for (const auto& c : j.at("columns")) m.columns.push_back({c.at(0).get<std::uint32_t>(), c.at(1).get<std::uint32_t>()});
  j.at("groups").get_to(m.groups);
  m.codes.clear();
  for (const auto& c : j.at("codes")) {
    std::map<std::int32_t, double> mp;
    for (const auto& p : c) mp[p.at(0).get<std::int32_t>()] = p.at(1).get<double>();
    m.codes.push_back(std::move(mp));
  }
  j.at("prior").get_to(m.prior);
  j.at("base").get_to(m.base);
  j.at("trees").get_to(m.trees);
  j.at("config").get_to(m.config);
  for (const auto& g : m.groups)
    for (auto c : g)
      if (g.empty() || c >= m.columns.size()) throw FormatError("model feature group references a missing column");
  if (m.codes.size() != m.groups.size()) throw FormatError("model codes do not match its feature groups");
}

/// Raw columns grouped by identical contents; each group becomes one feature.
inline std::vector<std::vector<std::uint32_t>> identical_column_groups(const FeatureTable& t) {
  std::map<std::vector<std::int32_t>, std::size_t> seen;
  std::vector<std::vector<std::uint32_t>> groups;
  for (std::uint32_t c = 0; c < t.cols(); ++c) {
    const auto [it, fresh] = seen.emplace(t.cells[c], groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(c);
  }
  return groups;
}

/// Boosts on `train`, early-stopping on `valid` when it is non-empty.
inline GBDTModel train_gbdt(const FeatureTable& t, std::span<const std::size_t> train, std::span<const std::size_t> valid,
                            const GBDTConfig& cfg, std::vector<std::vector<std::uint32_t>> groups = {}) {
  cfg.validate();
  t.validate();
  if (train.empty()) throw ContractError("no training rows");
  if (groups.empty()) groups = identical_column_groups(t);
  GBDTModel m;
  m.columns = t.columns;
  m.groups = std::move(groups);
  m.config = cfg;
  double pos = 0;
  for (auto r : train) pos += t.labels[r];
  m.prior = pos / static_cast<double>(train.size());
  const double p0 = std::clamp(m.prior, 1e-6, 1 - 1e-6);
  m.base = std::log(p0 / (1 - p0));

  Rng rng(Rng::mix(cfg.seed, 0x0575));
  std::vector<std::size_t> order(train.begin(), train.end());
  rng.shuffle(order.begin(), order.end());

  const std::size_t F = m.groups.size(), n = train.size();
  std::vector<std::vector<double>> xs(F, std::vector<double>(n));  // training codes, by position in `train`
  std::vector<std::size_t> pos_of(t.rows(), 0);
  for (std::size_t i = 0; i < n; ++i) pos_of[train[i]] = i;
  for (std::size_t f = 0; f < F; ++f) {
    const auto& col = t.cells[m.groups[f][0]];
    const auto enc = ordered_codes(col, t.labels, order, m.prior);
    for (std::size_t i = 0; i < n; ++i) xs[f][i] = enc[train[i]];
    m.codes.push_back(full_codes(col, t.labels, train, m.prior));
  }

  std::vector<std::vector<double>> borders(F);
  std::vector<std::vector<std::uint8_t>> bins(F, std::vector<std::uint8_t>(n));
  for (std::size_t f = 0; f < F; ++f) {
    borders[f] = detail::make_borders(xs[f], cfg.borders);
    for (std::size_t i = 0; i < n; ++i)
      bins[f][i] = static_cast<std::uint8_t>(std::lower_bound(borders[f].begin(), borders[f].end(), xs[f][i]) - borders[f].begin());
  }

  std::vector<std::uint8_t> y(n), yv(valid.size());
  for (std::size_t i = 0; i < n; ++i) y[i] = t.labels[train[i]];
  std::vector<std::vector<double>> xv(valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i) {
    std::vector<std::int32_t> raw(t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) raw[c] = t.at(valid[i], c);
    xv[i] = m.encode_row(raw);
    yv[i] = t.labels[valid[i]];
  }

  std::vector<double> score(n, m.base), vscore(valid.size(), m.base), g(n), h(n), row(F);
  double best_loss = valid.empty() ? 0.0 : detail::logloss(vscore, yv);
  std::size_t best_trees = 0;
  for (std::uint32_t it = 0; it < cfg.trees; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = detail::sigmoid(score[i]);
      g[i] = p - y[i];
      h[i] = p * (1 - p);
    }
    detail::TreeBuilder tb{bins, borders, g, h, cfg, {}};
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    tb.build(rows, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t f = 0; f < F; ++f) row[f] = xs[f][i];
      score[i] += tb.tree.predict(row);
    }
    if (!std::isfinite(score[0])) throw NumericalError("non-finite boosting score at tree " + std::to_string(it));
    for (std::size_t i = 0; i < valid.size(); ++i) vscore[i] += tb.tree.predict(xv[i]);
    m.trees.push_back(std::move(tb.tree));
    if (valid.empty()) {
      best_trees = m.trees.size();
      continue;
    }
    const double loss = detail::logloss(vscore, yv);
    if (loss < best_loss - 1e-12) {
      best_loss = loss;
      best_trees = m.trees.size();
    } else if (m.trees.size() - best_trees >= cfg.patience) {
      break;
    }
  }
  m.trees.resize(best_trees);
  return m;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldResult {
  std::size_t fold = 0;
  bool skipped = false;
  std::string warning;
  double accuracy = 0.0;
  std::vector<std::size_t> test_rows;
  GBDTModel model;
};

struct CVResult {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  double ci_half_width = 0.0;
  std::size_t used_folds = 0;
};

/// Assigns rows to folds by a seeded shuffle; fold sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> make_folds(std::size_t rows, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::mix(seed, 0xF01D));
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < rows; ++i) folds[i % k].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

/// Mean and 95% Student-t half width.
inline std::pair<double, double> mean_ci95(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  const boost::math::students_t dist(static_cast<double>(v.size() - 1));
  const double t = boost::math::quantile(dist, 0.975);
  return {mean, t * sd / std::sqrt(static_cast<double>(v.size()))};
}

/// Fold k tests on fold k, validates on fold k+1 and trains on the rest.
inline CVResult cross_validate(const FeatureTable& t, const GBDTConfig& cfg) {
  cfg.validate();
  t.validate();
  if (t.rows() < cfg.folds) throw ContractError("fewer rows than folds");
  const auto folds = make_folds(t.rows(), cfg.folds, cfg.seed);
  const auto groups = identical_column_groups(t);
  CVResult res;
  res.folds.resize(cfg.folds);
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t kk = 0; kk < static_cast<std::ptrdiff_t>(cfg.folds); ++kk) {
    const auto k = static_cast<std::size_t>(kk);
    auto& fr = res.folds[k];
    fr.fold = k;
    fr.test_rows = folds[k];
    const auto& valid = folds[(k + 1) % cfg.folds];
    std::vector<std::size_t> train;
    for (std::size_t j = 0; j < cfg.folds; ++j)
      if (j != k && j != (k + 1) % cfg.folds) train.insert(train.end(), folds[j].begin(), folds[j].end());
    std::sort(train.begin(), train.end());
    std::size_t pos = 0;
    for (auto r : train) pos += t.labels[r];
    if (pos == 0 || pos == train.size()) {
      fr.skipped = true;
      fr.warning = "fold " + std::to_string(k) + " skipped: training rows carry a single label";
      continue;
    }
    try {
      GBDTConfig fc = cfg;
      fc.seed = Rng::mix(cfg.seed, k);
      fr.model = train_gbdt(t, train, valid, fc, groups);
      std::size_t hits = 0;
      std::vector<std::int32_t> raw(t.cols());
      for (auto r : fr.test_rows) {
        for (std::size_t c = 0; c < t.cols(); ++c) raw[c] = t.at(r, c);
        hits += (fr.model.raw_score(raw) >= 0.0) == (t.labels[r] == 1);
      }
      fr.accuracy = static_cast<double>(hits) / static_cast<double>(fr.test_rows.size());
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  std::vector<double> acc;
  for (const auto& f : res.folds)
    if (!f.skipped) acc.push_back(f.accuracy);
  res.used_folds = acc.size();
  std::tie(res.mean_accuracy, res.ci_half_width) = mean_ci95(acc);
  return res;
}

inline void to_json(nlohmann::json& j, const FoldResult& f) {
  j = {{"fold", f.fold}, {"skipped", f.skipped}, {"warning", f.warning}, {"accuracy", f.accuracy}, {"test_rows", f.test_rows}};
  if (!f.skipped) j["model"] = f.model;
}
inline void from_json(const nlohmann::json& j, FoldResult& f) {
  j.at("fold").get_to(f.fold);
  j.at("skipped").get_to(f.skipped);
  j.at("warning").get_to(f.warning);
  j.at("accuracy").get_to(f.accuracy);
  j.at("test_rows").get_to(f.test_rows);
  if (!f.skipped) j.at("model").get_to(f.model);
}
inline void to_json(nlohmann::json& j, const CVResult& r) {
  j = {{"folds", r.folds}, {"mean_accuracy", r.mean_accuracy}, {"ci_half_width", r.ci_half_width}, {"used_folds", r.used_folds}};
}
inline void from_json(const nlohmann::json& j, CVResult& r) {
  j.at("folds").get_to(r.folds);
  j.at("mean_accuracy").get_to(r.mean_accuracy);
  j.at("ci_half_width").get_to(r.ci_half_width);
  j.at("used_folds").get_to(r.used_folds);
}

struct AccuracyRow {
  std::string task;
  double accuracy = 0;
  double ci_half_width = 0;
  std::size_t folds = 0;
};

inline std::string accuracy_csv(std::span<const AccuracyRow> rows) {
  std::string s = "task,accuracy,ci_half_width,ci_low,ci_high,folds\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f,%zu\n", r.accuracy, r.ci_half_width, r.accuracy - r.ci_half_width,
                  r.accuracy + r.ci_half_width, r.folds);
    s += r.task + buf;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Tree Shapley values

namespace detail {

struct PathElem {
  std::int32_t feature;
  double zero, one, weight;
};

inline void extend_path(std::vector<PathElem>& p, std::size_t depth, double zero, double one, std::int32_t feature) {
  p[depth] = {feature, zero, one, depth == 0 ? 1.0 : 0.0};
  const double d1 = static_cast<double>(depth + 1);
  for (std::size_t i = depth; i-- > 0;) {
    p[i + 1].weight += one * p[i].weight * static_cast<double>(i + 1) / d1;
    p[i].weight = zero * p[i].weight * static_cast<double>(depth - i) / d1;
  }
}

inline void unwind_path(std::vector<PathElem>& p, std::size_t depth, std::size_t index) {
  const double one = p[index].one, zero = p[index].zero;
  const double d1 = static_cast<double>(depth + 1);
  double next = p[depth].weight;
  for (std::size_t i = depth; i-- > 0;) {
    if (one != 0) {
      const double tmp = p[i].weight;
      p[i].weight = next * d1 / (static_cast<double>(i + 1) * one);
      next = tmp - p[i].weight * zero * static_cast<double>(depth - i) / d1;
    } else {
      p[i].weight = p[i].weight * d1 / (zero * static_cast<double>(depth - i));
    }
  }
  for (std::size_t i = index; i < depth; ++i) {
    p[i].feature = p[i + 1].feature;
    p[i].zero = p[i + 1].zero;
    p[i].one = p[i + 1].one;
  }
}

inline double unwound_sum(const std::vector<PathElem>& p, std::size_t depth, std::size_t index) {
  const double one = p[index].one, zero = p[index].zero;
  const double d1 = static_cast<double>(depth + 1);
  double next = p[depth].weight, total = 0;
  for (std::size_t i = depth; i-- > 0;) {
    if (one != 0) {
      const double tmp = next * d1 / (static_cast<double>(i + 1) * one);
      total += tmp;
      next = p[i].weight - tmp * zero * static_cast<double>(depth - i) / d1;
    } else {
      total += p[i].weight / (zero * static_cast<double>(depth - i) / d1);
    }
  }
  return total;
}

inline void tree_shap(const Tree& t, std::span<const double> x, std::vector<double>& phi, std::size_t node,
                      std::vector<PathElem> path, std::size_t depth, double zero, double one, std::int32_t feature) {
  if (path.size() < depth + 1) path.resize(depth + 1);
  extend_path(path, depth, zero, one, feature);
  const auto& n = t.nodes[node];
  if (n.feature < 0) {
    for (std::size_t i = 1; i <= depth; ++i) {
      const double w = unwound_sum(path, depth, i);
      phi[static_cast<std::size_t>(path[i].feature)] += w * (path[i].one - path[i].zero) * n.value;
    }
    return;
  }
  const auto f = static_cast<std::size_t>(n.feature);
  const auto hot = static_cast<std::size_t>(x[f] <= n.threshold ? n.left : n.right);
  const auto cold = static_cast<std::size_t>(x[f] <= n.threshold ? n.right : n.left);
  double in_zero = 1.0, in_one = 1.0;
  for (std::size_t k = 1; k <= depth; ++k)
    if (path[k].feature == n.feature) {
      in_zero = path[k].zero;
      in_one = path[k].one;
      unwind_path(path, depth, k);
      --depth;
      break;
    }
  path.resize(depth + 1);
  tree_shap(t, x, phi, hot, path, depth + 1, in_zero * t.nodes[hot].cover / n.cover, in_one, n.feature);
  tree_shap(t, x, phi, cold, path, depth + 1, in_zero * t.nodes[cold].cover / n.cover, 0.0, n.feature);
}

}  // namespace detail

/// Per-feature Shapley values of one tree for an encoded row.
inline std::vector<double> tree_shap_values(const Tree& t, std::span<const double> x) {
  std::vector<double> phi(x.size(), 0.0);
  if (t.nodes.empty() || t.nodes[0].feature < 0) return phi;
  detail::tree_shap(t, x, phi, 0, {}, 0, 1.0, 1.0, -1);
  return phi;
}

struct ShapRow {
  double base = 0.0;                 // expected raw score
  std::vector<double> contributions; // one per raw column
  double raw_score = 0.0;
};

/// Exact Shapley values; a group of identical columns shares its value equally.
inline ShapRow shap_values(const GBDTModel& m, std::span<const std::int32_t> raw) {
  const auto x = m.encode_row(raw);
  ShapRow out;
  out.base = m.base;
  out.raw_score = m.base;
  std::vector<double> phi(m.features(), 0.0);
  for (const auto& t : m.trees) {
    out.base += t.expected_value();
    out.raw_score += t.predict(x);
    const auto p = tree_shap_values(t, x);
    for (std::size_t f = 0; f < phi.size(); ++f) phi[f] += p[f];
  }
  out.contributions.assign(m.columns.size(), 0.0);
  for (std::size_t f = 0; f < m.groups.size(); ++f)
    for (auto c : m.groups[f]) out.contributions[c] = phi[f] / static_cast<double>(m.groups[f].size());
  return out;
}

// ---------------------------------------------------------------------------
// Head importance and selection

struct ShapGroup {
  std::int32_t label = 0;
  double mean = 0.0;
  std::size_t count = 0;
  bool operator==(const ShapGroup&) const = default;
};

struct HeadShap {
  HeadKey head;
  std::vector<ShapGroup> groups;  // ascending label
  double importance = 0.0;
  double signed_max = 0.0;
  double signed_min = 0.0;
  bool operator==(const HeadShap&) const = default;
};

struct ShapSummary {
  std::vector<HeadShap> heads;
  std::size_t rows = 0;
  double max_efficiency_error = 0.0;
};

/// Fills importance and signed extremes from the group means.
inline void finalize_head(HeadShap& h) {
  h.importance = h.signed_max = h.signed_min = 0.0;
  if (h.groups.empty()) return;
  double lo = h.groups[0].mean, hi = lo;
  for (const auto& g : h.groups) {
    lo = std::min(lo, g.mean);
    hi = std::max(hi, g.mean);
  }
  h.signed_max = hi;
  h.signed_min = lo;
  h.importance = h.groups.size() < 2 ? 0.0 : hi - lo;
}

/// Group each fold's test rows by the label at each head and average that head's
/// Shapley value within each group.
inline ShapSummary head_importance(const CVResult& cv, const FeatureTable& t) {
  struct Job {
    const GBDTModel* model;
    std::size_t row;
  };
  std::vector<Job> jobs;
  for (const auto& f : cv.folds)
    if (!f.skipped)
      for (auto r : f.test_rows) jobs.push_back({&f.model, r});
  std::vector<ShapRow> shaps(jobs.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t jj = 0; jj < static_cast<std::ptrdiff_t>(jobs.size()); ++jj) {
    const auto& j = jobs[static_cast<std::size_t>(jj)];
    std::vector<std::int32_t> raw(t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) raw[c] = t.at(j.row, c);
    shaps[static_cast<std::size_t>(jj)] = shap_values(*j.model, raw);
  }
  ShapSummary s;
  s.rows = jobs.size();
  std::vector<std::map<std::int32_t, std::pair<double, std::size_t>>> acc(t.cols());
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const auto& sr = shaps[k];
    double total = sr.base;
    for (std::size_t c = 0; c < t.cols(); ++c) {
      total += sr.contributions[c];
      auto& a = acc[c][t.at(jobs[k].row, c)];
      a.first += sr.contributions[c];
      ++a.second;
    }
    s.max_efficiency_error = std::max(s.max_efficiency_error, std::abs(total - sr.raw_score));
  }
  for (std::size_t c = 0; c < t.cols(); ++c) {
    HeadShap h;
    h.head = t.columns[c];
    for (const auto& [label, a] : acc[c]) h.groups.push_back({label, a.first / static_cast<double>(a.second), a.second});
    finalize_head(h);
    s.heads.push_back(std::move(h));
  }
  return s;
}

inline std::string shap_summary_csv(const ShapSummary& s) {
  std::string out = "layer,head,label,mean_shap,count\n";
  char buf[64];
  for (const auto& h : s.heads)
    for (const auto& g : h.groups) {
      std::snprintf(buf, sizeof buf, "%.17g", g.mean);
      out += std::to_string(h.head.layer) + "," + std::to_string(h.head.head) + "," + std::to_string(g.label) + "," + buf +
             "," + std::to_string(g.count) + "\n";
    }
  return out;
}

inline ShapSummary parse_shap_summary(std::string_view text) {
  ShapSummary s;
  std::map<HeadKey, HeadShap> heads;
  std::uint64_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != "layer,head,label,mean_shap,count")
        throw FormatError("SHAP summary header must be layer,head,label,mean_shap,count", 0);
      continue;
    }
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 5) throw FormatError("expected 5 fields on line " + std::to_string(line_no), line_no);
    HeadKey k{detail::parse_unsigned<std::uint32_t>(f[0], line_no, "layer"),
              detail::parse_unsigned<std::uint32_t>(f[1], line_no, "head")};
    ShapGroup g;
    try {
      g.label = std::stoi(std::string(f[2]));
      g.mean = std::stod(std::string(f[3]));
    } catch (const std::exception&) {
      throw FormatError("bad label or mean_shap on line " + std::to_string(line_no), line_no);
    }
    g.count = detail::parse_unsigned<std::size_t>(f[4], line_no, "count");
    auto& h = heads[k];
    h.head = k;
    h.groups.push_back(g);
  }
  for (auto& [k, h] : heads) {
    std::sort(h.groups.begin(), h.groups.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
    finalize_head(h);
    s.heads.push_back(std::move(h));
  }
  return s;
}

enum class SelectMode { Positive, Negative, Neutral, Random };

inline std::string_view to_string(SelectMode m) {
  switch (m) {
    case SelectMode::Positive: return "positive";
    case SelectMode::Negative: return "negative";
    case SelectMode::Neutral: return "neutral";
    case SelectMode::Random: return "random";
  }
  return "?";
}

inline SelectMode parse_select_mode(std::string_view s) {
  for (auto m : {SelectMode::Positive, SelectMode::Negative, SelectMode::Neutral, SelectMode::Random})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown selection mode '" + std::string(s) + "'");
}

struct HeadSelection {
  std::vector<HeadKey> heads;
  std::size_t pool = 0;
  bool shortfall = false;
};

inline HeadSelection select_heads(const ShapSummary& s, SelectMode mode, std::size_t k, std::uint64_t seed) {
  std::vector<const HeadShap*> pool;
  for (const auto& h : s.heads)
    if (mode == SelectMode::Neutral || mode == SelectMode::Random || h.importance > 0) pool.push_back(&h);
  auto by_key = [](const HeadShap* a, const HeadShap* b) { return a->head < b->head; };
  std::sort(pool.begin(), pool.end(), by_key);
  switch (mode) {
    case SelectMode::Positive:
      std::stable_sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->signed_max > b->signed_max; });
      break;
    case SelectMode::Negative:
      std::stable_sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->signed_min < b->signed_min; });
      break;
    case SelectMode::Neutral:
      std::stable_sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->importance < b->importance; });
      break;
    case SelectMode::Random: {
      Rng rng(Rng::mix(seed, 0x5E1EC7));
      rng.shuffle(pool.begin(), pool.end());
      break;
    }
  }
  HeadSelection out;
  out.pool = pool.size();
  out.shortfall = k > pool.size();
  for (std::size_t i = 0; i < std::min(k, pool.size()); ++i) out.heads.push_back(pool[i]->head);
  return out;
}

}  // namespace apmae
