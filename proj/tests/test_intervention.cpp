#include <gtest/gtest.h>

#include <set>

#include "apmae/corpus.hpp"
#include "apmae/intervention.hpp"

namespace apmae {
namespace {

LMConfig small_lm() {
  LMConfig c;
  c.layers = 2;
  c.heads = 4;
  c.width = 16;
  c.mlp = 32;
  c.context_len = 24;
  c.max_middle = 4;
  c.batch_size = 8;
  c.steps = 400;
  c.lr = 3e-3;
  return c;
}

const std::vector<TaskInstance>& instances() {
  static const std::vector<TaskInstance> inst = [] {
    MineOptions opt;
    opt.context_len = 24;
    opt.per_kind_per_file = 2;
    opt.seed = 6;
    return mine_instances(gen_corpus(4, 20), opt).instances;
  }();
  return inst;
}

const Lm& model() {
  static const Lm m = [] {
    Lm lm(small_lm(), 3);
    train_lm(lm, instances());
    return lm;
  }();
  return m;
}

std::vector<HeadKey> all_heads() {
  std::vector<HeadKey> v;
  for (std::uint32_t l = 0; l < 2; ++l)
    for (std::uint32_t h = 0; h < 4; ++h) v.push_back({l, h});
  return v;
}

TEST(Schedule, CountsCappedByAvailableHeads) {
  EXPECT_EQ(schedule_counts(16), (std::vector<std::uint32_t>{1, 2, 5, 10, 16}));
  EXPECT_EQ(schedule_counts(20), (std::vector<std::uint32_t>{1, 2, 5, 10, 20}));
  EXPECT_EQ(schedule_counts(5000), (std::vector<std::uint32_t>{1, 2, 5, 10, 20, 50, 100, 200, 400, 800}));
  EXPECT_TRUE(schedule_counts(0).empty());
}

TEST(Pools, BaselineMatchesPoolDefinition) {
  const auto p = build_pools(model(), instances(), 30, 1);
  EXPECT_LE(p.correct.size(), 30u);
  EXPECT_LE(p.incorrect.size(), 30u);
  EXPECT_GT(p.correct.size(), 0u);
  EXPECT_GT(p.incorrect.size(), 0u);
  std::set<std::uint64_t> ids;
  for (std::size_t i = 0; i < p.correct.size(); ++i) {
    EXPECT_EQ(p.baseline_correct[i], p.correct[i].first_truth());
    ids.insert(p.correct[i].id);
  }
  for (std::size_t i = 0; i < p.incorrect.size(); ++i) {
    EXPECT_NE(p.baseline_incorrect[i], p.incorrect[i].first_truth());
    EXPECT_FALSE(ids.count(p.incorrect[i].id));
  }
  const auto q = build_pools(model(), instances(), 30, 1);
  ASSERT_EQ(q.correct.size(), p.correct.size());
  for (std::size_t i = 0; i < p.correct.size(); ++i) EXPECT_EQ(q.correct[i].id, p.correct[i].id);
  const auto big = build_pools(model(), instances(), 100000, 1);
  const auto real = std::count_if(instances().begin(), instances().end(), [](const auto& i) { return i.task != TaskKind::Noise; });
  EXPECT_EQ(big.correct.size() + big.incorrect.size(), static_cast<std::size_t>(real));
}

TEST(RunSchedule, NoHeadsMeansNoChange) {
  const auto p = build_pools(model(), instances(), 20, 2);
  const std::vector<std::uint32_t> counts{1};
  const auto rep = run_schedule(model(), p, {}, counts, "all", "positive");
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].lost, 0u);
  EXPECT_EQ(rep.rows[0].gained, 0u);
  EXPECT_EQ(rep.rows[0].net, 0);
  EXPECT_TRUE(rep.rows[0].shortfall);
}

TEST(RunSchedule, AllHeadsMatchAttentionFreePass) {
  const auto p = build_pools(model(), instances(), 20, 3);
  const auto heads = all_heads();
  const std::vector<std::uint32_t> counts{8};
  const auto rep = run_schedule(model(), p, heads, counts, "all", "neutral");
  std::size_t lost = 0;
  for (const auto& inst : p.correct) lost += infer_fim(model(), inst, nullptr, true).predicted != inst.first_truth();
  EXPECT_EQ(rep.rows[0].lost, lost);
  EXPECT_FALSE(rep.rows[0].shortfall);
}

TEST(RunSchedule, InvariantsAndDeterminism) {
  const auto p = build_pools(model(), instances(), 25, 4);
  const auto heads = all_heads();
  const auto counts = schedule_counts(heads.size());
  const auto a = run_schedule(model(), p, heads, counts, "all", "random", 7);
  const auto b = run_schedule(model(), p, heads, counts, "all", "random", 7);
  EXPECT_EQ(a.rows, b.rows);
  for (const auto& r : a.rows) {
    EXPECT_LE(r.lost, r.n_correct);
    EXPECT_LE(r.gained, r.n_incorrect);
    EXPECT_LE(r.lost, r.changed_correct);
    EXPECT_LE(r.gained, r.changed_incorrect);
    EXPECT_EQ(r.net, static_cast<long>(r.gained) - static_cast<long>(r.lost));
  }
  const std::vector<std::uint32_t> bad{2, 2};
  EXPECT_THROW(run_schedule(model(), p, heads, bad, "all", "random"), ContractError);
}

TEST(Collapse, SmallestQualifyingCount) {
  InterventionReport rep;
  auto row = [](std::uint32_t c, std::size_t lost, std::size_t gained) {
    InterventionRow r;
    r.count = c;
    r.n_correct = 10;
    r.n_incorrect = 10;
    r.lost = lost;
    r.gained = gained;
    r.net = static_cast<long>(gained) - static_cast<long>(lost);
    return r;
  };
  rep.rows = {row(1, 2, 5), row(5, 10, 1), row(10, 10, 0), row(20, 10, 0)};
  mark_collapse(rep);
  EXPECT_EQ(rep.rows[0].net, 3);
  ASSERT_TRUE(rep.collapse_count.has_value());
  EXPECT_EQ(*rep.collapse_count, 10u);
  EXPECT_TRUE(rep.rows[2].collapse);
  EXPECT_FALSE(rep.rows[3].collapse);
  EXPECT_FALSE(rep.recovered_after_collapse);
  rep.rows.push_back(row(50, 9, 0));
  mark_collapse(rep);
  EXPECT_TRUE(rep.recovered_after_collapse);
}

TEST(Report, CsvRoundTripAndNetCheck) {
  InterventionRow r;
  r.task = "END_OF_LINE";
  r.mode = "positive";
  r.count = 5;
  r.n_correct = 200;
  r.n_incorrect = 200;
  r.lost = 2;
  r.gained = 5;
  r.changed_correct = 3;
  r.changed_incorrect = 9;
  r.net = 3;
  const std::vector<InterventionRow> rows{r};
  const auto csv = intervention_csv(rows);
  EXPECT_EQ(csv.substr(csv.find('\n') + 1), "END_OF_LINE,positive,0,5,0,200,200,2,5,3,9,3,0\n");
  EXPECT_EQ(parse_intervention_csv(csv), rows);
  auto bad = csv;
  bad.replace(bad.rfind(",3,0"), 4, ",4,0");
  EXPECT_THROW(parse_intervention_csv(bad), FormatError);
}

TEST(Summarize, SingleTaskEqualsItsCurveAndSeedsAverage) {
  std::vector<InterventionRow> rows;
  auto add = [&](std::string task, std::string mode, std::uint64_t seed, std::uint32_t c, long net) {
    InterventionRow r;
    r.task = task;
    r.mode = mode;
    r.seed = seed;
    r.count = c;
    r.net = net;
    if (net >= 0)
      r.gained = static_cast<std::size_t>(net);
    else
      r.lost = static_cast<std::size_t>(-net);
    rows.push_back(r);
  };
  add("A", "positive", 0, 1, 4);
  add("A", "positive", 0, 2, -6);
  auto s = summarize(rows);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s[0].mean_net, 4.0);
  EXPECT_DOUBLE_EQ(s[1].mean_net, -6.0);
  add("A", "random", 1, 1, 1);
  add("A", "random", 2, 1, 2);
  add("A", "random", 3, 1, 6);
  add("B", "random", 1, 1, -3);
  s = summarize(rows);
  const auto& rnd = s.back();
  EXPECT_EQ(rnd.mode, "random");
  EXPECT_EQ(rnd.runs, 2u);
  EXPECT_DOUBLE_EQ(rnd.mean_net, 0.0);  // seed mean 3 for A, -3 for B
  EXPECT_EQ(rnd.min_net, -3);
  EXPECT_EQ(rnd.max_net, 6);
  const auto csv = summary_csv(s);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "mode,count,log10_count,tasks,mean_net,std_net,min_net,max_net");
}

}  // namespace
}  // namespace apmae
