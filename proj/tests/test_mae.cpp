#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>

#include "apmae/mae.hpp"
#include "apmae/motifs.hpp"

namespace apmae {
namespace {

MAEConfig small_config() {
  MAEConfig c;
  c.pattern_size = 16;
  c.patch_size = 4;
  c.encoder = {1, 16, 2, 32};
  c.decoder = {1, 16, 2, 32};
  c.batch_size = 4;
  c.total_batches = 12;
  c.base_lr = 1e-3;
  return c;
}

std::vector<PatchSet> sample_batch(const Mae& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PatchSet> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(m.tensorize(random_attention(m.config().pattern_size, rng)));
  return out;
}

std::vector<MaskSelection> sample_masks(const std::vector<PatchSet>& batch, double ratio, std::uint64_t seed) {
  std::vector<MaskSelection> out;
  for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(select_mask(batch[i], ratio, seed + i));
  return out;
}

TEST(MAEConfig, FullPresetShapes) {
  const auto c = MAEConfig::full();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.encoder.layers, 24u);
  EXPECT_EQ(c.encoder.width, 512u);
  EXPECT_EQ(c.encoder.heads, 16u);
  EXPECT_EQ(c.decoder.layers, 8u);
  EXPECT_EQ(c.decoder.heads, 8u);
  EXPECT_EQ(c.patch_count(), 36u);
  EXPECT_EQ(c.masked_patches(), 18u);
  EXPECT_NEAR(c.learning_rate(), 1.44e-3, 1e-9);
}

TEST(MAEConfig, DeskPresetValidates) {
  const auto c = MAEConfig::desk();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.patch_count(), 10u);
}

TEST(MAEConfig, HeadsMustDivideWidth) {
  auto c = small_config();
  c.encoder.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Mae(c, 1), ConfigError);
}

TEST(MAEConfig, JsonRoundTrip) {
  const auto c = MAEConfig::desk();
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<MAEConfig>(), c);
}

TEST(MAEInit, SameSeedIsBitIdentical) {
  const Mae a(small_config(), 9), b(small_config(), 9), c(small_config(), 10);
  ASSERT_EQ(a.params().values().size(), b.params().values().size());
  EXPECT_TRUE(std::equal(a.params().values().begin(), a.params().values().end(), b.params().values().begin()));
  EXPECT_FALSE(std::equal(a.params().values().begin(), a.params().values().end(), c.params().values().begin()));
}

TEST(MAEInit, WeightsAreTruncatedNormal) {
  const Mae m(MAEConfig::desk(), 3);
  const auto& ps = m.params();
  const auto id = ps.find("encoder.block0.mlp.fc1.weight");
  const auto w = ps.value(id);
  double sum = 0, sq = 0, mx = 0;
  for (nn::Index i = 0; i < w.size(); ++i) {
    sum += w.data()[i];
    sq += double(w.data()[i]) * w.data()[i];
    mx = std::max(mx, std::abs(double(w.data()[i])));
  }
  const double n = static_cast<double>(w.size());
  EXPECT_NEAR(sum / n, 0.0, 2e-3);
  // Truncation at two standard deviations shrinks the spread to ~0.88 sigma.
  EXPECT_NEAR(std::sqrt(sq / n), 0.02 * 0.8796, 1e-3);
  EXPECT_LE(mx, 0.04 + 1e-7);
}

TEST(MAEInit, PositionsAreStandardSinCos) {
  const std::vector<PatchIndex> pos{{0, 0}, {3, 2}};
  const auto t = sincos_2d<double>(pos, 8);
  // width 8: quarter 2, omegas 1 and 1e-2
  EXPECT_DOUBLE_EQ(t(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(t(0, 2), 1.0);
  EXPECT_DOUBLE_EQ(t(1, 0), std::sin(3.0));
  EXPECT_DOUBLE_EQ(t(1, 1), std::sin(3.0 * 0.01));
  EXPECT_DOUBLE_EQ(t(1, 2), std::cos(3.0));
  EXPECT_DOUBLE_EQ(t(1, 3), std::cos(3.0 * 0.01));
  EXPECT_DOUBLE_EQ(t(1, 4), std::sin(2.0));
  EXPECT_DOUBLE_EQ(t(1, 7), std::cos(2.0 * 0.01));
}

TEST(MAEForward, PerfectReconstructionHasZeroLossAndGradient) {
  Mae m(small_config(), 4);
  auto batch = sample_batch(m, 3, 11);
  const auto masks = sample_masks(batch, 0.5, 5);
  std::vector<Reconstruction> recon;
  m.forward_train(batch, masks, false, &recon);
  // Masked targets never reach the encoder, so overwriting them with the
  // prediction leaves the prediction unchanged.
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (auto k : masks[b].masked)
      for (std::size_t c = 0; c < batch[b].patch_cells(); ++c) {
        const auto idx = k * batch[b].patch_cells() + c;
        if (batch[b].valid[idx]) batch[b].values[idx] = recon[b].predicted[idx];
      }
  EXPECT_EQ(m.forward_train(batch, masks, true), 0.0f);
  double norm = 0;
  for (float g : m.params().grads()) norm += double(g) * g;
  EXPECT_LE(std::sqrt(norm), 1e-8);
}

TEST(MAEForward, AllOnesTargetZeroPredictionIsUnitLoss) {
  Mae m(small_config(), 4);
  auto& ps = m.params();
  ps.value(ps.find("decoder_pred.weight")).setZero();
  ps.value(ps.find("decoder_pred.bias")).setZero();
  auto batch = sample_batch(m, 2, 3);
  for (auto& b : batch)
    for (std::size_t i = 0; i < b.values.size(); ++i) b.values[i] = b.valid[i] ? 1.0f : 0.0f;
  EXPECT_FLOAT_EQ(m.forward_train(batch, sample_masks(batch, 0.5, 1), false), 1.0f);
}

TEST(MAEForward, RejectsUnscaledInput) {
  Mae m(small_config(), 4);
  Rng rng(1);
  const auto raw = patchify(random_attention(16, rng), 4);
  const std::vector<PatchSet> batch{raw};
  const std::vector<MaskSelection> masks{select_mask(raw, 0.5, 1)};
  EXPECT_THROW(m.forward_train(batch, masks, false), ContractError);
}

TEST(MAEForward, PaddedCellsNeverEnterLoss) {
  Mae m(small_config(), 5);
  auto batch = sample_batch(m, 3, 21);
  // Mask everything but one patch so diagonal patches are certainly masked.
  std::vector<MaskSelection> masks;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    MaskSelection s;
    s.visible = {1};
    for (std::uint32_t k = 0; k < batch[b].count(); ++k)
      if (k != 1) s.masked.push_back(k);
    masks.push_back(s);
  }
  const float before = m.forward_train(batch, masks, false);
  Rng rng(2);
  for (auto& b : batch)
    for (std::size_t i = 0; i < b.values.size(); ++i)
      if (!b.valid[i]) b.values[i] = static_cast<float>(rng.uniform());
  EXPECT_EQ(m.forward_train(batch, masks, false), before);
}

TEST(MAEForward, LossInvariantToSampleOrder) {
  Mae m(small_config(), 6);
  auto batch = sample_batch(m, 4, 31);
  auto masks = sample_masks(batch, 0.5, 8);
  const float a = m.forward_train(batch, masks, false);
  std::reverse(batch.begin(), batch.end());
  std::reverse(masks.begin(), masks.end());
  EXPECT_NEAR(m.forward_train(batch, masks, false), a, 1e-6);
}

TEST(GradCheck, TinyConfigWithinTolerance) {
  const auto start = std::chrono::steady_clock::now();
  const auto report = grad_check(tiny_mae_config(), 1);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_GE(report.checked, 200u);
  EXPECT_LE(report.max_relative_error, 1e-3) << "worst " << report.worst_tensor;
  EXPECT_LT(seconds, 60.0);
}

TEST(GradCheck, Deterministic) { EXPECT_EQ(grad_check(tiny_mae_config(), 5, 64), grad_check(tiny_mae_config(), 5, 64)); }

TEST(GradCheck, RejectsLargeConfig) { EXPECT_THROW(grad_check(MAEConfig::desk(), 1), ConfigError); }

TEST(CosineSchedule, WarmupThenMonotoneToFloor) {
  const std::uint64_t total = 1000;
  const double peak = 1e-3;
  double prev = 1e9;
  for (std::uint64_t t = 50; t < total; ++t) {
    const double lr = nn::cosine_lr(t, total, peak, 0.05);
    EXPECT_LE(lr, prev + 1e-15);
    prev = lr;
  }
  EXPECT_NEAR(nn::cosine_lr(total - 1, total, peak, 0.05), 0.0, 1e-6);
  EXPECT_NEAR(nn::cosine_lr(49, total, peak, 0.05), peak, 1e-15);
  EXPECT_LT(nn::cosine_lr(0, total, peak, 0.05), peak);
}

TEST(MAETrain, BitReproducible) {
  const auto data = motif_corpus(40, 16, 1).patterns;
  Mae a(small_config(), 2), b(small_config(), 2);
  const auto ca = train_mae(a, data);
  const auto cb = train_mae(b, data);
  ASSERT_EQ(ca.size(), 12u);
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca[i].loss, cb[i].loss);
  EXPECT_TRUE(std::equal(a.params().values().begin(), a.params().values().end(), b.params().values().begin()));
  EXPECT_NEAR(ca.back().lr, 0.0, 1e-6);
}

TEST(MAETrain, EmptyOrInadmissibleDatasetRejected) {
  Mae m(small_config(), 2);
  EXPECT_THROW(train_mae(m, {}), ContractError);
  auto data = motif_corpus(5, 16, 1).patterns;
  for (auto& p : data) p.meta.correct = false;
  EXPECT_THROW(train_mae(m, data), ContractError);
}

TEST(MAETrain, NonFiniteLossAbortsWithBatchIndex) {
  auto cfg = small_config();
  cfg.log_scaling = false;
  Mae m(cfg, 2);
  auto data = motif_corpus(8, 16, 1).patterns;
  for (auto& p : data) p.values[3] = std::nanf("");
  try {
    train_mae(m, data);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos);
  }
}

TEST(MAECheckpoint, RoundTripIsBitExact) {
  Mae m(small_config(), 12);
  train_mae(m, motif_corpus(20, 16, 4).patterns);
  const auto path = std::filesystem::temp_directory_path() / ("apmae_mae_" + std::to_string(::getpid()) + ".ckpt");
  save_mae(m, path);
  const Mae loaded = load_mae(path);
  EXPECT_EQ(loaded.config(), m.config());
  EXPECT_EQ(loaded.steps(), m.steps());
  EXPECT_TRUE(std::equal(m.params().values().begin(), m.params().values().end(), loaded.params().values().begin()));
  std::filesystem::remove(path);
}

TEST(MAEEmbed, IdenticalPatternsIdenticalEmbeddings) {
  const Mae m(small_config(), 3);
  Rng rng(4);
  const auto p = random_attention(16, rng);
  const auto a = m.embed(m.tensorize(p));
  EXPECT_EQ(a.size(), 16u);
  EXPECT_EQ(a, m.embed(m.tensorize(p)));
}

TEST(MAEEmbed, SizeMismatchRejected) {
  const Mae m(small_config(), 3);
  Rng rng(4);
  EXPECT_THROW(m.tensorize(random_attention(32, rng)), ContractError);
}

TEST(MAEEvaluate, DeterministicAndCrossEvalDiagonalMatches) {
  Mae m(small_config(), 3);
  const auto data = motif_corpus(30, 16, 8).patterns;
  const auto a = evaluate_mae(m, data);
  const auto b = evaluate_mae(m, data);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.count, 30u);
  const auto cross = cross_evaluate({{"m", &m}}, {{"m", data}});
  ASSERT_EQ(cross.cells.size(), 1u);
  EXPECT_EQ(cross.at("m", "m").mean, a.mean);
  EXPECT_EQ(cross.at("m", "m").stddev, a.stddev);
}

TEST(MAEEvaluate, MissingDatasetRejected) {
  Mae m(small_config(), 3);
  EXPECT_THROW(cross_evaluate({{"a", &m}}, {{"b", motif_corpus(3, 16, 1).patterns}}), ContractError);
}

TEST(MAEEvaluate, TableRendering) {
  CrossEvalReport r;
  r.trained = {"SC2 3B"};
  r.evaluated = {"SC2 3B"};
  EvalReport cell;
  cell.mean = 7.07e-3;
  cell.stddev = 2.12e-3;
  r.cells = {{cell}};
  EXPECT_EQ(render_cross_eval(r), "Trained \\ Evaluated | SC2 3B Loss (x10^-3)\nSC2 3B | 7.07 (2.12)\n");
}

TEST(Motifs, RowsAreSoftmaxNormalised) {
  Rng rng(1);
  for (std::size_t f = 0; f < kMotifFamilyCount; ++f) {
    const auto p = motif_pattern(static_cast<MotifFamily>(f), 64, rng);
    EXPECT_NO_THROW(validate_pattern(p));
  }
}

}  // namespace
}  // namespace apmae
