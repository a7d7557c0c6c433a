#include <gtest/gtest.h>

#include <filesystem>

#include "apmae/corpus.hpp"
#include "apmae/lm.hpp"

namespace apmae {
namespace {

LMConfig tiny_lm() {
  LMConfig c;
  c.layers = 2;
  c.heads = 4;
  c.width = 16;
  c.mlp = 32;
  c.context_len = 24;
  c.max_middle = 4;
  c.batch_size = 8;
  c.steps = 40;
  c.lr = 3e-3;
  c.holdout_fraction = 0.2;
  return c;
}

const std::vector<TaskInstance>& tiny_instances() {
  static const std::vector<TaskInstance> inst = [] {
    MineOptions opt;
    opt.context_len = 24;
    opt.per_kind_per_file = 2;
    opt.noise_count = 3;
    opt.seed = 5;
    return mine_instances(gen_corpus(3, 20), opt).instances;
  }();
  return inst;
}

const Lm& trained_tiny() {
  static const Lm model = [] {
    Lm m(tiny_lm(), 7);
    train_lm(m, tiny_instances());
    return m;
  }();
  return model;
}

TEST(LMConfig, Validation) {
  auto c = tiny_lm();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(Lm(c, 1), ConfigError);
  EXPECT_EQ(LMConfig{}.context_len, 256u);
  EXPECT_EQ(LMConfig::desk().context_len, 64u);
  const nlohmann::json j = tiny_lm();
  EXPECT_EQ(j.get<LMConfig>(), tiny_lm());
}

TEST(LMTrainingSequence, LayoutAndTruncation) {
  const auto cfg = tiny_lm();
  TaskInstance inst;
  inst.stream.assign(24, 'a');
  inst.truth = {'x', 'y'};
  auto seq = training_sequence(inst, cfg);
  ASSERT_EQ(seq.size(), cfg.sequence_len());
  EXPECT_EQ(seq[24], TokenId{'x'});
  EXPECT_EQ(seq[25], TokenId{'y'});
  EXPECT_EQ(seq[26], Vocab::kEos);
  EXPECT_EQ(seq[27], Vocab::kPad);
  inst.truth.assign(9, 'z');
  seq = training_sequence(inst, cfg);
  EXPECT_EQ(seq[27], TokenId{'z'});
  EXPECT_EQ(seq[28], Vocab::kPad);  // truncated truth carries no EOS
  inst.stream.pop_back();
  EXPECT_THROW(training_sequence(inst, cfg), ContractError);
}

TEST(LMGradient, MatchesFiniteDifferences) {
  auto cfg = tiny_lm();
  cfg.layers = 1;
  cfg.context_len = 6;
  cfg.max_middle = 1;
  MiniLM<double> m(cfg, 3);
  Rng rng(4);
  std::vector<TokenId> ids(2 * 8);
  for (auto& id : ids) id = static_cast<TokenId>(rng.below(Vocab::kSize));
  ids[7] = Vocab::kPad;
  m.loss(ids, 2, 8, true);
  const std::vector<double> grad(m.params().grads().begin(), m.params().grads().end());
  auto values = m.params().values();
  double worst = 0;
  for (int k = 0; k < 200; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(values.size()));
    const double saved = values[i];
    values[i] = saved + 1e-5;
    const double up = m.loss(ids, 2, 8, false);
    values[i] = saved - 1e-5;
    const double down = m.loss(ids, 2, 8, false);
    values[i] = saved;
    const double num = (up - down) / 2e-5;
    const double rel = std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, rel);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(LMTrain, DeterministicAndLossFalls) {
  Lm a(tiny_lm(), 7), b(tiny_lm(), 7);
  const auto ra = train_lm(a, tiny_instances());
  const auto rb = train_lm(b, tiny_instances());
  EXPECT_TRUE(std::equal(a.params().values().begin(), a.params().values().end(), b.params().values().begin()));
  ASSERT_EQ(ra.curve.size(), 40u);
  EXPECT_LT(ra.curve.back().loss, ra.curve.front().loss);
  EXPECT_GT(ra.heldout_instances, 0u);
  std::size_t held = 0;
  for (const auto& [k, acc] : ra.heldout) {
    EXPECT_NE(k, TaskKind::Noise);
    held += acc.total;
  }
  EXPECT_EQ(held, ra.heldout_instances);
  EXPECT_EQ(a.steps(), 40u);
}

TEST(LMTrain, HeldOutSplitIsPerFile) {
  const auto cfg = tiny_lm();
  std::map<std::uint32_t, std::set<bool>> sides;
  for (const auto& inst : tiny_instances())
    if (inst.file_id) sides[*inst.file_id].insert(is_heldout(inst, cfg));
  for (const auto& [f, s] : sides) EXPECT_EQ(s.size(), 1u) << "file " << f;
}

TEST(LMInfer, EmptyMaskMatchesNoMask) {
  const auto& m = trained_tiny();
  const auto& inst = tiny_instances()[0];
  const HeadMask none = make_head_mask(2, 4, {});
  EXPECT_EQ(infer_fim(m, inst).logits, infer_fim(m, inst, &none).logits);
}

TEST(LMInfer, AllHeadsMaskedEqualsSkippedAttention) {
  const auto& m = trained_tiny();
  const auto& inst = tiny_instances()[1];
  std::vector<HeadKey> all;
  for (std::uint32_t l = 0; l < 2; ++l)
    for (std::uint32_t h = 0; h < 4; ++h) all.push_back({l, h});
  const auto mask = make_head_mask(2, 4, all);
  EXPECT_EQ(infer_fim(m, inst, &mask).logits, infer_fim(m, inst, nullptr, true).logits);
  EXPECT_NE(infer_fim(m, inst, &mask).logits, infer_fim(m, inst).logits);
}

TEST(LMInfer, AttentionRowsAreCausalDistributions) {
  const auto r = infer_fim(trained_tiny(), tiny_instances()[2]);
  ASSERT_EQ(r.attention.size(), 8u);
  for (const auto& a : r.attention) {
    ASSERT_EQ(a.rows(), 24);
    for (nn::Index i = 0; i < a.rows(); ++i) {
      EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-4);
      for (nn::Index j = i + 1; j < a.cols(); ++j) EXPECT_EQ(a(i, j), 0.0f);
    }
  }
}

TEST(LMInfer, ZeroingIsLocalToLaterLayers) {
  const auto& m = trained_tiny();
  const auto& inst = tiny_instances()[3];
  const std::vector<HeadKey> keys{{0, 2}};
  const auto mask = make_head_mask(2, 4, keys);
  const auto base = infer_fim(m, inst);
  const auto zeroed = infer_fim(m, inst, &mask);
  // Layer 0 attention is computed before its head output is zeroed; layer 1 sees the change.
  for (std::size_t k = 0; k < 4; ++k) EXPECT_TRUE(base.attention[k] == zeroed.attention[k]);
  bool changed = false;
  for (std::size_t k = 4; k < 8; ++k) changed |= !(base.attention[k] == zeroed.attention[k]);
  EXPECT_TRUE(changed);
  EXPECT_NE(base.logits, zeroed.logits);
}

TEST(LMInfer, StreamLengthMismatchRejected) {
  auto inst = tiny_instances()[0];
  inst.stream.push_back(Vocab::kPad);
  EXPECT_THROW(infer_fim(trained_tiny(), inst), ContractError);
}

TEST(HeadList, ParseAndFormat) {
  const auto keys = parse_head_list("0:1, 2:3\n# comment 9:9\n1:0\n");
  ASSERT_EQ(keys.size(), 3u);
  EXPECT_EQ(keys[1], (HeadKey{2, 3}));
  EXPECT_EQ(parse_head_list(format_head_list(keys)), keys);
  EXPECT_THROW(parse_head_list("3"), FormatError);
  EXPECT_THROW(parse_head_list("a:1"), FormatError);
  EXPECT_THROW(make_head_mask(2, 4, std::vector<HeadKey>{{2, 0}}), ContractError);
}

TEST(Harvest, QuarterOfHeadsIsOnePerLayerForFourHeads) {
  const auto keys = sample_heads(4, 4, 0.25, 11);
  ASSERT_EQ(keys.size(), 4u);
  for (std::uint32_t l = 0; l < 4; ++l) EXPECT_EQ(keys[l].layer, l);
  EXPECT_EQ(sample_heads(30, 24, 1.0, 1).size(), 720u);
  EXPECT_THROW(sample_heads(4, 4, 0.0, 1), ConfigError);
}

TEST(Harvest, PatternsCarryMetaAndAreCausal) {
  const auto& m = trained_tiny();
  HarvestOptions opt;
  opt.model_id = "tiny";
  opt.seed = 3;
  HarvestSummary summary;
  const std::span<const TaskInstance> inst(tiny_instances().data(), 30);
  const auto pats = harvest(m, inst, opt, &summary);
  ASSERT_EQ(pats.size(), 30u * 2u);  // round(0.25 * 4) = 1 head in each of 2 layers
  EXPECT_EQ(summary.records.size(), 30u);
  for (std::size_t k = 0; k < pats.size(); ++k) {
    const auto& p = pats[k];
    EXPECT_NO_THROW(validate_pattern(p));
    EXPECT_EQ(p.size, 24u);
    EXPECT_EQ(p.model_id, "tiny");
    EXPECT_EQ(p.layer, k % 2);
    const auto& rec = summary.records[k / 2];
    EXPECT_EQ(p.meta.sample_id, rec.instance_id);
    EXPECT_EQ(p.meta.correct, rec.correct);
  }
  EXPECT_EQ(harvest(m, inst, opt), pats);
}

TEST(Harvest, FullRatioYieldsEveryHead) {
  HarvestOptions opt;
  opt.subsample_ratio = 1.0;
  const std::span<const TaskInstance> inst(tiny_instances().data(), 2);
  EXPECT_EQ(harvest(trained_tiny(), inst, opt).size(), 2u * 8u);
}

TEST(Harvest, CorrectOnlyAndBalancing) {
  const auto& m = trained_tiny();
  HarvestOptions opt;
  opt.correct_only = true;
  for (const auto& p : harvest(m, tiny_instances(), opt)) EXPECT_EQ(p.meta.correct, std::optional<bool>(true));

  opt.correct_only = false;
  opt.balance = true;
  HarvestSummary summary;
  harvest(m, tiny_instances(), opt, &summary);
  std::map<TaskKind, std::array<std::size_t, 2>> counts;
  for (const auto& r : summary.records) {
    if (r.task == TaskKind::Noise) {
      EXPECT_FALSE(r.correct.has_value());
      continue;
    }
    ASSERT_TRUE(r.correct.has_value());
    ++counts[r.task][*r.correct ? 1 : 0];
  }
  for (const auto& [k, c] : counts) EXPECT_EQ(c[0], c[1]) << to_string(k);
}

TEST(Harvest, UntrainedModelRejected) {
  const Lm fresh(tiny_lm(), 1);
  EXPECT_THROW(harvest(fresh, tiny_instances(), HarvestOptions{}), ContractError);
}

TEST(LMCheckpoint, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / ("apmae_lm_" + std::to_string(::getpid()) + ".ckpt");
  save_lm(trained_tiny(), path);
  const Lm loaded = load_lm(path);
  EXPECT_EQ(loaded.config(), trained_tiny().config());
  EXPECT_EQ(infer_fim(loaded, tiny_instances()[0]).logits, infer_fim(trained_tiny(), tiny_instances()[0]).logits);
  EXPECT_THROW(load_mae(path), FormatError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace apmae

namespace apmae {
namespace {

TEST(HarvestRecords, TsvRoundTrip) {
  std::vector<HarvestRecord> rows(2);
  rows[0] = {4, TaskKind::EndOfLine, 17, true, {{0, 1}, {3, 2}}};
  rows[1] = {9, TaskKind::Noise, 3, std::nullopt, {}};
  const auto text = records_tsv(rows);
  const auto back = parse_records(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].instance_id, 4u);
  EXPECT_EQ(back[0].task, TaskKind::EndOfLine);
  EXPECT_EQ(back[0].correct, std::optional<bool>(true));
  EXPECT_EQ(back[0].heads, rows[0].heads);
  EXPECT_FALSE(back[1].correct.has_value());
  EXPECT_TRUE(back[1].heads.empty());
  EXPECT_EQ(records_tsv(back), text);
  EXPECT_THROW(parse_records("nope\n"), FormatError);
}

}  // namespace
}  // namespace apmae
