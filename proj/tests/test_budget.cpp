// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "test_util.hpp"

namespace lwt {
namespace {

ModelConfig preset(const char* name) { return *find_preset(name); }

double millions(const ModelConfig& c) { return static_cast<double>(count_params_analytic(c).total_params()) / 1e6; }
double giga(const ModelConfig& c) {
  return static_cast<double>(count_madds_analytic(c, kDefaultNq, kDefaultNv).total_madds()) / 1e9;
}

TEST(Budget, BaselineExactCounts) {
  const BudgetReport r = count_madds_analytic(preset("baseline"), 14, 100);
  const std::uint64_t d = 512;
  EXPECT_EQ(r.total_weights(), 168 * d * d);
  EXPECT_EQ(r.total_weights(), 44040192u);
  EXPECT_EQ(r.total_aux(), 98304u);
  EXPECT_EQ(r.total_params(), 44138496u);
  EXPECT_EQ(r.total_madds(), 2581536768u);
  EXPECT_EQ(format_millions(r.total_params()), "44.1");
  EXPECT_EQ(format_giga(r.total_madds()), "2.58");
}

TEST(Budget, Lw1xWeightsAreNinetyOneAndAHalfDSquared) {
  const BudgetReport r = count_params_analytic(preset("lw1x"));
  EXPECT_EQ(r.total_weights(), 23986176u);
  EXPECT_EQ(2 * r.total_weights(), 183u * 512u * 512u);
}

struct Golden {
  const char* preset;
  double params_m;
  double madds_g;
};

TEST(Budget, GoldenParametersWithinTolerance) {
  for (const Golden& g : {Golden{"baseline", 44.1, 2.58}, {"gmha", 37.0, 2.21}, {"gffn", 37.7, 2.22},
                          {"lw1x", 24.0, 1.85}, {"lw2x", 26.3, 2.16}, {"lw3x", 28.7, 2.46}, {"lw1x-glml", 20.4, 1.69},
                          {"lw1x-mini", 14.5, 1.50}, {"lw1x-full", 11.0, 1.33}}) {
    EXPECT_NEAR(millions(preset(g.preset)), g.params_m, 0.15) << g.preset;
    EXPECT_NEAR(giga(preset(g.preset)), g.madds_g, 0.02) << g.preset;
  }
}

TEST(Budget, ClosedFormValuesOfTheInconsistentRows) {
  // these rows disagree with the published table; pin the closed form instead
  EXPECT_EQ(count_params_analytic(preset("gmha-gffn")).total_weights(), 117u * 512u * 512u);
  EXPECT_NEAR(millions(preset("gmha-gffn")), 30.77, 0.01);
  EXPECT_NEAR(millions(preset("lw3x-k4")), 20.23, 0.01);
  EXPECT_NEAR(millions(preset("lw3x-k8")), 18.09, 0.01);
}

TEST(Budget, HeadlineReductions) {
  const BudgetReport base = count_madds_analytic(preset("baseline"), 14, 100);
  const BudgetReport lw = count_madds_analytic(preset("lw1x"), 14, 100);
  const double params = 100.0 * (1.0 - static_cast<double>(lw.total_params()) / base.total_params());
  const double weights = 100.0 * (1.0 - static_cast<double>(lw.total_weights()) / base.total_weights());
  const double madds = 100.0 * (1.0 - static_cast<double>(lw.total_madds()) / base.total_madds());
  EXPECT_NEAR(params, 45.5, 0.1);
  EXPECT_NEAR(weights, 45.5, 0.1);
  EXPECT_NEAR(madds, 28.3, 0.1);
  EXPECT_EQ(format_reduction(lw.total_params(), base.total_params()), "45.5");
}

TEST(Budget, EmptyModelAndZeroLengths) {
  ModelConfig c = preset("baseline");
  c.n_enc = c.n_dec = 0;
  EXPECT_EQ(count_params_analytic(c).total_params(), 0u);
  EXPECT_EQ(count_madds_analytic(preset("baseline"), 0, 0).total_madds(), 0u);
}

TEST(Budget, WeightSharingSavesExactlyTheGroupCopies) {
  for (std::size_t k : {2u, 4u}) {
    ModelConfig on = preset("lw1x");
    on.k = k;
    ModelConfig off = on;
    off.weight_sharing = false;
    const BudgetReport a = count_madds_analytic(on, 14, 100), b = count_madds_analytic(off, 14, 100);
    // grouped projections: per attention (2e+1) d^2/k copies, per FFN d_f d/k
    const std::uint64_t d = 512, df = 2048;
    const std::uint64_t grouped_off = 18 * (3 * d * d / k) + 12 * (df * d / k);
    EXPECT_EQ(b.total_weights() - a.total_weights(), grouped_off * (k - 1) / k) << k;
    EXPECT_EQ(a.total_madds(), b.total_madds());
  }
}

TEST(Budget, GroupedLinearRatios) {
  // FFN scaling layer alone, biases aside: 1/k without sharing, 1/k^2 with
  ModelConfig c = preset("baseline");
  c.n_enc = 1;
  c.n_dec = 0;
  c.use_gffn = true;
  const auto scaling_weights = [](const ModelConfig& cfg) {
    return count_params_analytic(cfg).rows[1].weights - cfg.d * cfg.d_f;
  };
  const std::uint64_t dense = c.d * c.d_f;
  for (std::size_t k : {2u, 4u, 8u}) {
    c.k = k;
    c.weight_sharing = false;
    EXPECT_EQ(scaling_weights(c) * k, dense);
    c.weight_sharing = true;
    EXPECT_EQ(scaling_weights(c) * k * k, dense);
  }
}

TEST(Budget, ParamsMonotoneInGroups) {
  for (const char* name : {"lw1x", "lw3x", "lw1x-full", "gmha", "gffn"}) {
    ModelConfig c = preset(name);
    std::uint64_t prev = UINT64_MAX;
    for (std::size_t k : {1u, 2u, 4u, 8u}) {
      c.k = k;
      const std::uint64_t p = count_params_analytic(c).total_params();
      EXPECT_LE(p, prev) << name << " k=" << k;
      prev = p;
    }
  }
}

TEST(Budget, DoublingEncoderLengthScalesProjectionsAndScores) {
  ModelConfig c = preset("baseline");
  const auto enc_attn = [&](std::uint64_t nq) { return count_madds_analytic(c, nq, 1).rows[0].madds; };
  const std::uint64_t d = 512;
  const auto proj = [&](std::uint64_t n) { return 4 * n * d * d; };
  const auto scores = [&](std::uint64_t n) { return 2 * n * n * d; };
  EXPECT_EQ(enc_attn(10), proj(10) + scores(10));
  EXPECT_EQ(enc_attn(20) - scores(20), 2 * proj(10));
  EXPECT_EQ(scores(20), 4 * scores(10));
}

TEST(Budget, TotalsAreSumOfRows) {
  const BudgetReport r = count_madds_analytic(preset("lw1x-full"), 7, 9);
  std::uint64_t w = 0, a = 0, m = 0;
  for (const auto& row : r.rows) {
    w += row.weights;
    a += row.aux_params;
    m += row.madds;
  }
  EXPECT_EQ(w, r.total_weights());
  EXPECT_EQ(a, r.total_aux());
  EXPECT_EQ(m, r.total_madds());
}

TEST(Budget, SingleLinearAndSingleMatmul) {
  // one dense d x d linear with bias: d^2 + d; the model's merge layer is one
  Model m = init_params(testing::small_config(8, 2, 1, false, false, false), 0);
  EXPECT_EQ(m.encoder[0].attn.wo[0]->value.size() + m.encoder[0].attn.bo[0]->value.size(), 8u * 8u + 8u);
  Tape t;
  t.set_shape_only(true);
  matmul(t.constant(Tensor({6, 4})), t.constant(Tensor({4, 9})));
  EXPECT_EQ(t.madds(), 6u * 4u * 9u);
}

TEST(Budget, AnalyticEqualsActualAndInstrumented) {
  Rng rng(2024);
  for (int i = 0; i < 60; ++i) {
    const ModelConfig c = testing::random_valid_config(rng);
    const std::size_t nq = 1 + rng.below(20), nv = 1 + rng.below(20);
    const Model m = init_params(c, i);
    const BudgetReport r = count_madds_analytic(c, nq, nv);
    EXPECT_EQ(r.total_params(), count_params_actual(m)) << "config " << i;
    EXPECT_EQ(r.total_madds(), count_madds_instrumented(m, nq, nv)) << "config " << i;
  }
}

TEST(Budget, InstrumentedMatchesAnalyticAtFullSize) {
  for (const char* name : {"baseline", "lw1x", "lw3x", "lw1x-full"}) {
    const Model m = init_params(preset(name), 0);
    EXPECT_EQ(count_params_actual(m), count_params_analytic(preset(name)).total_params()) << name;
    EXPECT_EQ(count_madds_instrumented(m, 14, 100), count_madds_analytic(preset(name), 14, 100).total_madds()) << name;
  }
}

TEST(Budget, InstrumentedNeedsNonEmptySequences) {
  const Model m = init_params(testing::small_config(8, 2, 1, false, false, false), 0);
  EXPECT_THROW(count_madds_instrumented(m, 0, 3), ConfigError);
}

TEST(Budget, InvalidConfigRejected) {
  ModelConfig c = preset("baseline");
  c.k = 3;
  c.use_gmha = true;
  EXPECT_THROW(count_params_analytic(c), ConfigError);
}

TEST(Format, RoundHalfEven) {
  EXPECT_EQ(format_millions(44138496), "44.1");
  EXPECT_EQ(format_millions(24050000), "24.0");
  EXPECT_EQ(format_millions(24150000), "24.2");
  EXPECT_EQ(format_millions(24150001), "24.2");
  EXPECT_EQ(format_millions(24049999), "24.0");
  EXPECT_EQ(format_millions(0), "0.0");
  EXPECT_EQ(format_giga(2581536768), "2.58");
  EXPECT_EQ(format_giga(1325000000), "1.32");
  EXPECT_EQ(format_giga(1335000000), "1.34");
}

TEST(Format, ReductionAgainstItselfIsZero) {
  EXPECT_EQ(format_reduction(44138496, 44138496), "0.0");
}

TEST(Report, CsvHeaderRowsAndTotal) {
  const BudgetReport r = count_madds_analytic(preset("baseline"), 14, 100);
  const std::string csv = report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "component,layer,weights,aux_params,madds");
  EXPECT_NE(csv.find("enc.attn,0,"), std::string::npos);
  EXPECT_NE(csv.find("dec.cross_attn,5,"), std::string::npos);
  EXPECT_NE(csv.find("total,,44040192,98304,2581536768\n"), std::string::npos);
  // 6 encoder x 3 rows + 6 decoder x 4 rows + header + total
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 6u * 3u + 6u * 4u + 2u);
}

TEST(Report, TextMentionsRoundedTotals) {
  const std::string text = report_text(count_madds_analytic(preset("lw1x"), 14, 100), "lw1x");
  EXPECT_NE(text.find("1.85G"), std::string::npos);
  EXPECT_NE(text.find("params: 24.1M"), std::string::npos);
  EXPECT_NE(text.find("weights: 24.0M"), std::string::npos);
}

TEST(Report, TableCoversAllRows) {
  const auto rows = table_rows(preset("baseline"), ablation_variants(), 14, 100);
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows[0].params_reduction, "0.0");
  EXPECT_EQ(rows[0].madds_reduction, "0.0");
  for (const auto& r : rows) {
    const bool flagged = r.name == "gmha-gffn" || r.name == "lw3x-k4" || r.name == "lw3x-k8";
    EXPECT_EQ(!r.note.empty(), flagged) << r.name;
  }
  const std::string csv = table_report(preset("baseline"), ablation_variants(), 14, 100, true);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,params,madds,params_m,madds_g,params_reduction_pct,madds_reduction_pct,note");
}

TEST(Budget, ToyModelsDifferByMoreThanFortyPercent) {
  const auto dense = count_params_analytic(preset("toy-dense")).total_params();
  const auto lw = count_params_analytic(preset("toy-lw1x")).total_params();
  EXPECT_GE(1.0 - static_cast<double>(lw) / static_cast<double>(dense), 0.40);
}

}  // namespace
}  // namespace lwt
