#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "apmae/gbdt.hpp"

namespace apmae {
namespace {

/// One informative head whose label matches the class with probability `fidelity`;
/// every other head carries uniform noise labels in {-1, 0..3}.
FeatureTable planted_table(std::size_t rows, std::size_t heads, std::size_t planted, double fidelity, std::uint64_t seed) {
  Rng rng(seed);
  FeatureTable t;
  for (std::size_t h = 0; h < heads; ++h) t.columns.push_back({static_cast<std::uint32_t>(h / 8), static_cast<std::uint32_t>(h % 8)});
  t.cells.assign(heads, std::vector<std::int32_t>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t y = r % 2;
    t.labels.push_back(y);
    t.sample_ids.push_back(1000 + r);
    for (std::size_t h = 0; h < heads; ++h) t.cells[h][r] = static_cast<std::int32_t>(rng.below(5)) - 1;
    t.cells[planted][r] = rng.bernoulli(fidelity) ? y : 1 - y;
  }
  return t;
}

// Path-dependent expectation of a tree with the features in `known` fixed to x.
double cond_expectation(const Tree& t, std::span<const double> x, unsigned known, std::size_t node = 0) {
  const auto& n = t.nodes[node];
  if (n.feature < 0) return n.value;
  const auto l = static_cast<std::size_t>(n.left), r = static_cast<std::size_t>(n.right);
  if (known & (1u << n.feature)) return cond_expectation(t, x, known, x[static_cast<std::size_t>(n.feature)] <= n.threshold ? l : r);
  return (t.nodes[l].cover * cond_expectation(t, x, known, l) + t.nodes[r].cover * cond_expectation(t, x, known, r)) / n.cover;
}

std::vector<double> brute_shap(const Tree& t, std::span<const double> x) {
  const std::size_t M = x.size();
  std::vector<double> fact(M + 1, 1.0);
  for (std::size_t i = 1; i <= M; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  std::vector<double> phi(M, 0.0);
  for (std::size_t i = 0; i < M; ++i)
    for (unsigned s = 0; s < (1u << M); ++s) {
      if (s & (1u << i)) continue;
      const auto k = static_cast<std::size_t>(__builtin_popcount(s));
      const double w = fact[k] * fact[M - k - 1] / fact[M];
      phi[i] += w * (cond_expectation(t, x, s | (1u << i)) - cond_expectation(t, x, s));
    }
  return phi;
}

TEST(OrderedStats, FormulaExamples) {
  const std::vector<std::int32_t> cat{7, 7, 7, 3};
  const std::vector<std::uint8_t> y{1, 1, 0, 1};
  const std::vector<std::size_t> order{0, 1, 2, 3};
  const auto c = ordered_codes(cat, y, order, 0.5);
  EXPECT_DOUBLE_EQ(c[0], 0.5);
  EXPECT_DOUBLE_EQ(c[1], 1.5 / 2.0);
  EXPECT_DOUBLE_EQ(c[2], 2.5 / 3.0);
  EXPECT_DOUBLE_EQ(c[3], 0.5);  // first appearance of its category
  const auto full = full_codes(cat, y, order, 0.5);
  EXPECT_DOUBLE_EQ(full.at(7), 2.5 / 4.0);
  EXPECT_DOUBLE_EQ(full.at(3), 1.5 / 2.0);
}

TEST(OrderedStats, OwnLabelNeverLeaks) {
  const std::vector<std::int32_t> cat{1, 1};
  const std::vector<std::size_t> order{1, 0};
  const auto a = ordered_codes(cat, std::vector<std::uint8_t>{0, 1}, order, 0.5);
  const auto b = ordered_codes(cat, std::vector<std::uint8_t>{1, 1}, order, 0.5);
  EXPECT_EQ(a[1], b[1]);  // row 1 comes first, so row 0's label is irrelevant to it
  EXPECT_DOUBLE_EQ(a[0], 1.5 / 2.0);
}

TEST(Folds, PartitionRows) {
  const auto folds = make_folds(103, 10, 4);
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_GE(f.size(), 10u);
    EXPECT_LE(f.size(), 11u);
    for (auto r : f) EXPECT_TRUE(seen.insert(r).second);
  }
  EXPECT_EQ(seen.size(), 103u);
  EXPECT_EQ(make_folds(103, 10, 4), folds);
}

TEST(Folds, StudentTInterval) {
  const std::vector<double> v{0.7, 0.8, 0.75, 0.72, 0.78, 0.74, 0.76, 0.71, 0.79, 0.77};
  const auto [mean, half] = mean_ci95(v);
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0.752, 1e-12);
  EXPECT_NEAR(half, 2.2621571627 * std::sqrt(ss / 9) / std::sqrt(10.0), 1e-9);
}

TEST(TreeShap, SingleSplitMatchesHandValues) {
  Tree t;
  t.nodes = {{0, 0.5, 1, 2, 0.0, 10.0}, {-1, 0, -1, -1, 1.0, 4.0}, {-1, 0, -1, -1, -2.0, 6.0}};
  const std::vector<double> x{0.2, 9.0};
  const auto phi = tree_shap_values(t, x);
  // E = 0.4*1 + 0.6*(-2) = -0.8; x goes left so phi_0 = 1 - (-0.8).
  EXPECT_NEAR(t.expected_value(), -0.8, 1e-15);
  EXPECT_NEAR(phi[0], 1.8, 1e-12);
  EXPECT_EQ(phi[1], 0.0);
}

TEST(TreeShap, RepeatedFeatureMatchesBruteForce) {
  Tree t;
  t.nodes = {{0, 0.5, 1, 2, 0, 100}, {1, 0.3, 3, 4, 0, 60},  {0, 0.8, 5, 6, 0, 40},
             {-1, 0, -1, -1, 0.7, 25}, {-1, 0, -1, -1, -0.4, 35}, {2, 0.1, 7, 8, 0, 15},
             {-1, 0, -1, -1, 1.3, 25}, {-1, 0, -1, -1, 0.2, 5}, {-1, 0, -1, -1, -0.9, 10}};
  for (const auto& x : std::vector<std::vector<double>>{{0.6, 0.1, 0.0}, {0.2, 0.9, 0.5}, {0.9, 0.0, 0.0}}) {
    const auto fast = tree_shap_values(t, x);
    const auto slow = brute_shap(t, x);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(fast[i], slow[i], 1e-12);
  }
}

TEST(TreeShap, TrainedTreesMatchBruteForce) {
  const auto t = planted_table(600, 10, 2, 0.8, 3);
  std::vector<std::size_t> train(600);
  std::iota(train.begin(), train.end(), std::size_t{0});
  GBDTConfig cfg;
  cfg.trees = 5;
  const auto m = train_gbdt(t, train, {}, cfg);
  ASSERT_EQ(m.features(), 10u);
  for (std::size_t r = 0; r < 5; ++r) {
    std::vector<std::int32_t> raw(10);
    for (std::size_t c = 0; c < 10; ++c) raw[c] = t.at(r, c);
    const auto x = m.encode_row(raw);
    for (const auto& tree : m.trees) {
      const auto fast = tree_shap_values(tree, x);
      const auto slow = brute_shap(tree, x);
      for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(fast[i], slow[i], 1e-9);
    }
  }
}

TEST(TreeShap, ZeroTreeModel) {
  const auto t = planted_table(100, 4, 0, 0.8, 1);
  std::vector<std::size_t> train(100);
  std::iota(train.begin(), train.end(), std::size_t{0});
  GBDTConfig cfg;
  cfg.trees = 0;
  const auto m = train_gbdt(t, train, {}, cfg);
  const std::vector<std::int32_t> raw{0, 1, 2, 3};
  const auto s = shap_values(m, raw);
  EXPECT_EQ(s.contributions, std::vector<double>(4, 0.0));
  EXPECT_DOUBLE_EQ(s.base, 0.0);  // balanced labels: logit(0.5)
  EXPECT_DOUBLE_EQ(m.probability(raw), 0.5);
  EXPECT_THROW(shap_values(m, std::vector<std::int32_t>{0}), ContractError);
}

TEST(Gbdt, PlantedHeadIsLearnedAndRanksFirst) {
  const auto t = planted_table(1500, 16, 5, 0.8, 7);
  GBDTConfig cfg;
  cfg.seed = 2;
  const auto cv = cross_validate(t, cfg);
  EXPECT_EQ(cv.used_folds, 10u);
  EXPECT_GE(cv.mean_accuracy, 0.70);
  const auto s = head_importance(cv, t);
  EXPECT_EQ(s.rows, 1500u);
  EXPECT_LE(s.max_efficiency_error, 1e-6);
  std::size_t top = 0;
  for (std::size_t h = 1; h < s.heads.size(); ++h)
    if (s.heads[h].importance > s.heads[top].importance) top = h;
  EXPECT_EQ(s.heads[top].head, t.columns[5]);
  // Label 1 at the planted head pushes towards "correct".
  const auto& g = s.heads[5].groups;
  ASSERT_EQ(g.size(), 2u);
  EXPECT_LT(g[0].mean, 0.0);
  EXPECT_GT(g[1].mean, 0.0);
}

TEST(Gbdt, ShuffledLabelsNearChance) {
  auto t = planted_table(2000, 16, 5, 0.8, 8);
  Rng rng(99);
  rng.shuffle(t.labels.begin(), t.labels.end());
  GBDTConfig cfg;
  const auto cv = cross_validate(t, cfg);
  EXPECT_NEAR(cv.mean_accuracy, 0.5, 0.05);
}

TEST(Gbdt, DeterministicAcrossRuns) {
  const auto t = planted_table(400, 8, 1, 0.8, 9);
  GBDTConfig cfg;
  cfg.trees = 30;
  const auto a = cross_validate(t, cfg);
  const auto b = cross_validate(t, cfg);
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(a.folds[k].model, b.folds[k].model);
}

TEST(Gbdt, IdenticalColumnsShareCredit) {
  auto t = planted_table(800, 6, 2, 0.8, 10);
  t.cells[4] = t.cells[2];
  t.columns[4] = {9, 9};
  GBDTConfig cfg;
  cfg.trees = 40;
  const auto cv = cross_validate(t, cfg);
  const auto s = head_importance(cv, t);
  for (std::size_t i = 0; i < s.heads[2].groups.size(); ++i)
    EXPECT_NEAR(s.heads[2].groups[i].mean, s.heads[4].groups[i].mean, 1e-6);
  EXPECT_LE(s.max_efficiency_error, 1e-6);
}

TEST(Gbdt, SingleLabelFoldsSkipped) {
  auto t = planted_table(50, 3, 0, 0.8, 11);
  std::fill(t.labels.begin(), t.labels.end(), std::uint8_t{1});
  const auto cv = cross_validate(t, GBDTConfig{});
  EXPECT_EQ(cv.used_folds, 0u);
  for (const auto& f : cv.folds) {
    EXPECT_TRUE(f.skipped);
    EXPECT_NE(f.warning.find("single label"), std::string::npos);
  }
}

TEST(Gbdt, ModelJsonRoundTrip) {
  const auto t = planted_table(300, 6, 1, 0.8, 12);
  GBDTConfig cfg;
  cfg.trees = 10;
  const auto cv = cross_validate(t, cfg);
  const nlohmann::json j = cv;
  const auto back = j.get<CVResult>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
  EXPECT_EQ(back.folds[3].model, cv.folds[3].model);
}

TEST(HeadImportance, DefinitionExamples) {
  HeadShap h;
  h.groups = {{-1, 0.2, 5}, {0, -0.3, 5}};
  finalize_head(h);
  EXPECT_DOUBLE_EQ(h.importance, 0.5);
  EXPECT_DOUBLE_EQ(h.signed_max, 0.2);
  EXPECT_DOUBLE_EQ(h.signed_min, -0.3);
  h.groups = {{2, 0.7, 9}};
  finalize_head(h);
  EXPECT_EQ(h.importance, 0.0);
}

TEST(SelectHeads, ModesAndShortfall) {
  ShapSummary s;
  auto add = [&](std::uint32_t l, std::uint32_t hd, double lo, double hi) {
    HeadShap h;
    h.head = {l, hd};
    h.groups = {{0, lo, 1}, {1, hi, 1}};
    finalize_head(h);
    s.heads.push_back(h);
  };
  add(0, 0, -0.1, 0.5);
  add(0, 1, -0.6, 0.1);
  add(1, 0, 0.0, 0.0);
  add(1, 1, -0.2, 0.3);
  EXPECT_TRUE(select_heads(s, SelectMode::Positive, 0, 1).heads.empty());
  EXPECT_EQ(select_heads(s, SelectMode::Positive, 2, 1).heads, (std::vector<HeadKey>{{0, 0}, {1, 1}}));
  EXPECT_EQ(select_heads(s, SelectMode::Negative, 1, 1).heads, (std::vector<HeadKey>{{0, 1}}));
  EXPECT_EQ(select_heads(s, SelectMode::Neutral, 1, 1).heads, (std::vector<HeadKey>{{1, 0}}));
  const auto pos = select_heads(s, SelectMode::Positive, 10, 1);
  EXPECT_TRUE(pos.shortfall);
  EXPECT_EQ(pos.pool, 3u);
  const auto r1 = select_heads(s, SelectMode::Random, 4, 5);
  EXPECT_EQ(r1.heads.size(), 4u);
  EXPECT_EQ(select_heads(s, SelectMode::Random, 4, 5).heads, r1.heads);

  ShapSummary zero;
  zero.heads.resize(3);
  const auto z = select_heads(zero, SelectMode::Positive, 2, 1);
  EXPECT_TRUE(z.heads.empty());
  EXPECT_TRUE(z.shortfall);
  EXPECT_THROW(parse_select_mode("loud"), ConfigError);
}

TEST(ShapCsv, RoundTrip) {
  ShapSummary s;
  HeadShap h;
  h.head = {2, 3};
  h.groups = {{-1, 0.125, 4}, {1, -0.25, 6}};
  finalize_head(h);
  s.heads.push_back(h);
  const auto csv = shap_summary_csv(s);
  EXPECT_EQ(csv, "layer,head,label,mean_shap,count\n2,3,-1,0.125,4\n2,3,1,-0.25,6\n");
  const auto back = parse_shap_summary(csv);
  ASSERT_EQ(back.heads.size(), 1u);
  EXPECT_EQ(back.heads[0], h);
  EXPECT_THROW(parse_shap_summary("layer,head\n"), FormatError);
}

TEST(FeatureTableIo, BinaryRoundTripAndErrors) {
  const auto t = planted_table(37, 5, 1, 0.8, 13);
  const auto bytes = encode_feature_table(t);
  EXPECT_EQ(decode_feature_table(bytes), t);
  const auto path = std::filesystem::temp_directory_path() / ("apmae_ft_" + std::to_string(::getpid()) + ".bin");
  save_feature_table(t, path);
  EXPECT_EQ(load_feature_table(path), t);
  std::filesystem::remove(path);
  auto cut = bytes;
  cut.pop_back();
  EXPECT_THROW(decode_feature_table(cut), FormatError);
  auto bad = bytes;
  bad[3] = 'Z';
  EXPECT_THROW(decode_feature_table(bad), FormatError);
}

TEST(FeatureTableBuild, FromAssignmentsAndRecords) {
  std::vector<Assignment> a{{{0, 1}, 10, 2}, {{1, 0}, 10, kNoise}, {{0, 1}, 11, 0}, {{0, 1}, 12, 1}};
  std::vector<HarvestRecord> recs(4);
  recs[0] = {11, TaskKind::EndOfLine, 0, false, {}};
  recs[1] = {10, TaskKind::EndOfLine, 0, true, {}};
  recs[2] = {12, TaskKind::Identifier, 0, true, {}};
  recs[3] = {13, TaskKind::Noise, 0, std::nullopt, {}};
  const auto t = build_feature_table(a, recs, TaskKind::EndOfLine);
  ASSERT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.sample_ids, (std::vector<std::uint64_t>{10, 11}));
  EXPECT_EQ(t.labels, (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(t.columns, (std::vector<HeadKey>{{0, 1}, {1, 0}}));
  EXPECT_EQ(t.cells[0], (std::vector<std::int32_t>{2, 0}));
  EXPECT_EQ(t.cells[1], (std::vector<std::int32_t>{kNoise, kMissing}));
  const auto all = build_feature_table(a, recs);
  EXPECT_EQ(all.rows(), 3u);
  const auto bal = balance_table(all, 1);
  EXPECT_EQ(bal.rows(), 2u);
  EXPECT_EQ(std::count(bal.labels.begin(), bal.labels.end(), 1), 1);
}

}  // namespace
}  // namespace apmae
