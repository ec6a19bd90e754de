#include <gtest/gtest.h>

#include <random>

#include "sdetr/cost_model.hpp"
#include "test_util.hpp"

namespace sdetr {
namespace {

TEST(AttnCost, UnitGrid) {
  const auto c = attn_cost({1, 1, 1, 1, 1});
  EXPECT_EQ(c.macs, 2u);
  EXPECT_EQ(c.mem_units, 2u);
}

TEST(AttnCost, SmallRectangularCase) {
  const auto c = attn_cost({4, 3, 2, 2, 1});
  EXPECT_EQ(c.macs, 48u);
  EXPECT_EQ(c.mem_units, 20u);
  EXPECT_EQ(c.p_units, 12u);
  EXPECT_EQ(c.a_units, 8u);
}

TEST(AttnCost, SelfAttentionForm) {
  for (std::size_t t : {1u, 5u, 16u}) {
    for (std::size_t n : {1u, 2u, 4u}) {
      const std::size_t d = 8;
      const auto c = attn_cost({t, t, d, d, n});
      EXPECT_EQ(c.macs, 2 * t * t * d);
      EXPECT_EQ(c.mem_units, t * (n * t + d));
    }
  }
}

TEST(AttnCost, MatchesInstrumentedKernel) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t heads = std::size_t{1} << (rng() % 3);
    AttentionDims d{1 + rng() % 12, 1 + rng() % 12, heads * (1 + rng() % 4), heads * (1 + rng() % 4), heads};
    CostCounters counters;
    attention_forward(testing::random_matrix(d.h, d.w, rng), testing::random_matrix(d.h_prime, d.w, rng),
                      testing::random_matrix(d.h_prime, d.w_prime, rng), heads, &counters);
    const auto c = attn_cost(d);
    EXPECT_EQ(c.macs, counters.macs);
    EXPECT_EQ(c.p_units, counters.peak_p);
    EXPECT_EQ(c.a_units, counters.peak_a);
  }
}

TEST(ModelCost, SingleLevelHasNoLevelThreeRows) {
  const auto r = model_cost(parse_config("6-6-0-0"), 512, 512);
  EXPECT_EQ(r.per_layer.size(), 6u + 2u * 6u);
  for (const auto& row : r.per_layer) EXPECT_EQ(row.level, 4);
}

TEST(ModelCost, TotalsAreSumsOfRows) {
  const auto r = model_cost(parse_config("3-3-3-3 + 8-8-1-8"), 256, 384);
  std::uint64_t macs = 0, mem = 0;
  for (const auto& row : r.per_layer) {
    macs += row.cost.macs;
    mem += row.cost.mem_units;
    EXPECT_EQ(row.cost.mem_units, row.dims.n_heads * row.dims.h * row.dims.h_prime + row.dims.h * row.dims.w_prime);
  }
  EXPECT_EQ(r.total_macs, macs);
  EXPECT_EQ(r.total_mem_units, mem);
}

TEST(ModelCost, LevelThreeEncoderIsSixteenTimesLevelFour) {
  for (std::size_t side : {64u, 128u, 512u}) {
    const auto r = model_cost(parse_config("1-1-1-1 + 8-8-8-8"), side, side);
    std::uint64_t l3 = 0, l4 = 0;
    for (const auto& row : r.per_layer) {
      if (row.kind != BlockKind::EncoderSelf) continue;
      (row.level == 3 ? l3 : l4) = row.cost.macs;
    }
    EXPECT_EQ(l3, 16 * l4) << side;
  }
}

TEST(ModelCost, SingleHeadLevelThreeOnlyChangesLevelThreeEncoders) {
  const auto multi = model_cost(parse_config("3-3-3-3 + 8-8-8-8"), 512, 512);
  const auto single = model_cost(parse_config("3-3-3-3 + 8-8-1-8"), 512, 512);
  ASSERT_EQ(multi.per_layer.size(), single.per_layer.size());
  for (std::size_t i = 0; i < multi.per_layer.size(); ++i) {
    const auto& a = multi.per_layer[i];
    const auto& b = single.per_layer[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.cost.macs, b.cost.macs);
    if (a.level == 3 && a.kind == BlockKind::EncoderSelf) {
      EXPECT_EQ(a.cost.p_units, 8 * b.cost.p_units);
      EXPECT_EQ(a.cost.a_units, b.cost.a_units);
    } else {
      EXPECT_EQ(a.cost.mem_units, b.cost.mem_units);
    }
  }
}

TEST(ModelCost, DoublingSideMultipliesEncoderMacsBySixteen) {
  const auto cfg = parse_config("2-2-2-2 + 8-8-1-8");
  const auto small = model_cost(cfg, 128, 96);
  const auto big = model_cost(cfg, 256, 192);
  for (std::size_t i = 0; i < small.per_layer.size(); ++i) {
    if (small.per_layer[i].kind == BlockKind::EncoderSelf) {
      EXPECT_EQ(big.per_layer[i].cost.macs, 16 * small.per_layer[i].cost.macs);
    }
  }
}

TEST(ModelCost, CrossAttentionUsesQueriesAgainstTokens) {
  auto cfg = parse_config("1-1-0-1");
  cfg.n_queries = 100;
  const auto r = model_cost(cfg, 64, 64);
  for (const auto& row : r.per_layer) {
    if (row.kind != BlockKind::DecoderCross) continue;
    EXPECT_EQ(row.dims.h, 100u);
    EXPECT_EQ(row.dims.h_prime, row.level == 4 ? 4u : 16u);
  }
  EXPECT_EQ(r.per_layer.back().id, "L3.dec0.cross");
}

TEST(ModelCost, RejectsIndivisibleInput) {
  EXPECT_THROW(model_cost(ModelConfig{}, 1333, 1333), ValidationError);
  EXPECT_THROW(model_cost(ModelConfig{}, 0, 32), ValidationError);
}

TEST(ModelCost, JsonIsStableAndComplete) {
  const auto cfg = parse_config("3-3-3-3 + 8-8-1-8");
  const auto a = to_json(model_cost(cfg, 512, 512)).dump();
  const auto b = to_json(model_cost(cfg, 512, 512)).dump();
  EXPECT_EQ(a, b);
  const auto j = nlohmann::json::parse(a);
  EXPECT_EQ(j["config"], "3-3-3-3 + 8-8-1-8");
  EXPECT_EQ(j["excluded"], (nlohmann::json{"ffn", "projections", "backbone"}));
  EXPECT_EQ(j["layers"][0]["kind"], "enc-self");
  EXPECT_EQ(j["input_hw"], (nlohmann::json{512, 512}));
}

}  // namespace
}  // namespace sdetr
