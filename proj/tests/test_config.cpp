#include <gtest/gtest.h>

#include "apmae/config.hpp"

namespace apmae {
namespace {

TEST(Config, EmptyTextGivesDeskPreset) {
  const auto c = parse_pipeline_config("");
  EXPECT_EQ(c.preset, "desk");
  EXPECT_EQ(c.lm.context_len, LMConfig::desk().context_len);
  EXPECT_EQ(c.mine.context_len, c.lm.context_len);
  EXPECT_EQ(c.mae.total_batches, MAEConfig::desk().total_batches);
  EXPECT_DOUBLE_EQ(c.harvest.subsample_ratio, 1.0);
}

TEST(Config, FullPreset) {
  const auto c = parse_pipeline_config("[general]\npreset = full\n");
  EXPECT_EQ(c.lm.context_len, LMConfig{}.context_len);
  EXPECT_EQ(c.mae.pattern_size, MAEConfig::full().pattern_size);
  EXPECT_DOUBLE_EQ(c.harvest.subsample_ratio, 0.25);
  EXPECT_EQ(c.intervene.pool_size, 1000u);
}

TEST(Config, OverridesAndComments) {
  const auto c = parse_pipeline_config(
      "# top\n[mae]\nencoder_layers = 2  # shallower\nbase_lr = 0.002\nlog_scaling = false\n"
      "[classify]\nfolds = 5\n[harvest]\ncorrect_only = true\n");
  EXPECT_EQ(c.mae.encoder.layers, 2u);
  EXPECT_DOUBLE_EQ(c.mae.base_lr, 0.002);
  EXPECT_FALSE(c.mae.log_scaling);
  EXPECT_EQ(c.classify.folds, 5u);
  EXPECT_TRUE(c.harvest.correct_only);
}

TEST(Config, ErrorsNameTheLine) {
  auto msg = [](const std::string& text) {
    try {
      parse_pipeline_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(msg("[mae]\nbogus = 1\n").find("line 2"), std::string::npos);
  EXPECT_NE(msg("[nope]\nx = 1\n").find("unknown section"), std::string::npos);
  EXPECT_NE(msg("[lm]\nsteps = 3\nsteps = 4\n").find("duplicate"), std::string::npos);
  EXPECT_NE(msg("[lm]\nsteps = many\n").find("integer"), std::string::npos);
  EXPECT_NE(msg("[general]\npreset = huge\n").find("unknown preset"), std::string::npos);
  EXPECT_NE(msg("[mine]\ncontext_len = 32\n").find("context_len"), std::string::npos);
  EXPECT_NE(msg("[harvest]\nsubsample_ratio = 0\n").find("subsample_ratio"), std::string::npos);
  EXPECT_NE(msg("x = 1\n").find("outside"), std::string::npos);
}

TEST(Config, RenderRoundTrips) {
  auto c = parse_pipeline_config("[lm]\nsteps = 77\n[mae]\nmask_ratio = 0.6\n");
  const auto text = render_pipeline_config(c);
  const auto d = parse_pipeline_config(text);
  EXPECT_EQ(render_pipeline_config(d), text);
  EXPECT_EQ(d.lm.steps, 77u);
  EXPECT_DOUBLE_EQ(d.mae.mask_ratio, 0.6);
}

}  // namespace
}  // namespace apmae
