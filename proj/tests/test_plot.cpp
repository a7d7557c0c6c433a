#include <gtest/gtest.h>

#include "apmae/motifs.hpp"
#include "apmae/plot.hpp"

namespace apmae {
namespace {

std::size_t occurrences(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

TEST(Csv, MissingColumnIsNamed) {
  try {
    CsvTable t("task,accuracy\nA,0.5\n", {"task", "accuracy", "folds"});
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("'folds'"), std::string::npos);
  }
  CsvTable t("a,b\n1,x\n", {"a"});
  EXPECT_DOUBLE_EQ(t.num(0, "a"), 1.0);
  EXPECT_THROW(t.num(0, "b"), FormatError);
  EXPECT_THROW(CsvTable("a,b\n1\n", {}), FormatError);
}

TEST(Svg, FixedNumberFormat) {
  EXPECT_EQ(Svg::f(1.0 / 3), "0.33");
  EXPECT_EQ(Svg::f(-0.001), "0.00");
  Svg s(10, 10);
  s.text(1, 2, "a<b");
  EXPECT_NE(s.str().find("a&lt;b"), std::string::npos);
  EXPECT_NE(s.str().find("font-family=\"DejaVu Sans\""), std::string::npos);
}

TEST(Plot, AccuracyBarsAndCsv) {
  const std::vector<AccuracyRow> rows{{"END_OF_LINE", 0.8, 0.04, 10}, {"IF_CONDITION", 0.6, 0.05, 9}};
  const auto p = plot_accuracy(rows);
  EXPECT_EQ(occurrences(p.svg, "<rect"), 1u + 2u);
  EXPECT_EQ(p.csv, accuracy_csv(rows));
  const auto back = parse_accuracy(p.csv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].task, "IF_CONDITION");
  EXPECT_EQ(plot_accuracy(rows).svg, p.svg);
}

TEST(Plot, ClusterCountHistogram) {
  const std::vector<HeadClusterCount> rows{{{0, 0}, 2}, {{0, 1}, 2}, {{0, 2}, 3}, {{1, 0}, 0}};
  const auto p = plot_cluster_count(rows);
  // one bar per non-empty (layer, count) cell
  EXPECT_EQ(occurrences(p.svg, "fill=\"#1f77b4\""), 3u);
  EXPECT_NE(p.svg.find("layer 1"), std::string::npos);
  EXPECT_EQ(p.csv.substr(0, p.csv.find('\n')), "layer,clusters,heads");
  const auto again = parse_cluster_counts("layer,head,clusters\n0,0,2\n0,1,2\n0,2,3\n1,0,0\n");
  EXPECT_EQ(plot_cluster_count(again).svg, p.svg);
}

TEST(Plot, ShapMapPointsPerGroup) {
  ShapSummary s;
  HeadShap a{{0, 0}, {{-1, 0.1, 3}, {0, -0.2, 5}}, 0, 0, 0};
  HeadShap b{{1, 0}, {{0, 0.4, 2}}, 0, 0, 0};
  s.heads = {a, b};
  const auto p = plot_shap_map(s);
  EXPECT_EQ(occurrences(p.svg, "<circle"), 3u);
  EXPECT_NE(p.svg.find(">L1<"), std::string::npos);
  EXPECT_EQ(p.csv, shap_summary_csv(s));
}

TEST(Plot, InterventionOneLinePerMode) {
  std::vector<InterventionRow> rows;
  for (std::string mode : {"positive", "random"})
    for (std::uint32_t c : {1u, 2u, 5u}) {
      InterventionRow r;
      r.task = "T";
      r.mode = mode;
      r.count = c;
      r.lost = c;
      r.net = -static_cast<long>(c);
      rows.push_back(r);
    }
  const auto p = plot_intervention(rows);
  EXPECT_EQ(occurrences(p.svg, "<polyline"), 2u);
  EXPECT_NE(p.svg.find("(log scale)"), std::string::npos);
  EXPECT_EQ(p.csv, summary_csv(summarize(rows)));
}

TEST(Plot, ReconTriptychPanels) {
  auto cfg = tiny_mae_config();
  Mae m(cfg, 1);
  const auto corpus = motif_corpus(1, cfg.pattern_size, 3);
  const auto r = recon_panels(m, corpus.patterns[0], 5);
  const auto cells = AttentionPattern::cell_count(cfg.pattern_size);
  ASSERT_EQ(r.original.size(), cells);
  ASSERT_EQ(r.masked.size(), cells);
  std::size_t hidden = 0, same = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    if (std::isnan(r.masked[i])) {
      ++hidden;
      EXPECT_EQ(r.composite[i], r.reconstructed[i]);
    } else {
      EXPECT_EQ(r.masked[i], r.original[i]);
      same += r.composite[i] == r.original[i];
    }
  }
  EXPECT_GT(hidden, 0u);
  EXPECT_EQ(same, cells - hidden);
  const auto p = plot_recon_triptych(r);
  EXPECT_EQ(occurrences(p.csv, "\n"), 1 + 4 * cells);
  EXPECT_NE(p.svg.find(">composite<"), std::string::npos);
}

}  // namespace
}  // namespace apmae
