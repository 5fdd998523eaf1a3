#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "sbd/analysis.hpp"
#include "sbd/pipeline.hpp"
#include "test_support.hpp"

namespace sbd {
namespace {

ActivationDataset planted_dataset(std::size_t pairs, std::uint64_t seed, std::uint32_t tokens = 0) {
  return synth_paired_dataset(
      {.n_pairs = pairs, .d = 16, .planted_dims = {0, 1, 2}, .seed = seed, .tokens_per_record = tokens});
}

std::set<std::string> pair_ids(const ActivationDataset& ds) {
  std::set<std::string> out;
  for (const auto& r : ds.records) out.insert(r.pair_id);
  return out;
}

// Swaps the labels inside each pair with probability 1/2.
ActivationDataset shuffle_labels(ActivationDataset ds, std::uint64_t seed) {
  Rng rng(seed);
  std::map<std::string, bool> flip;
  for (auto& r : ds.records) {
    auto [it, fresh] = flip.try_emplace(r.pair_id, false);
    if (fresh) it->second = rng.uniform() < 0.5;
    if (it->second) r.label = r.label == kBuggy ? kPatched : kBuggy;
  }
  return ds;
}

TEST(Split, TenPairsGiveEightAndTwo) {
  const auto ds = planted_dataset(10, 1);
  const auto s = split_pairs(ds, {.train_fraction = 0.8, .seed = 3});
  EXPECT_EQ(pair_ids(s.train).size(), 8u);
  EXPECT_EQ(pair_ids(s.test).size(), 2u);
  EXPECT_EQ(s.train.records.size(), 16u);
  EXPECT_EQ(s.test.records.size(), 4u);
}

TEST(Split, PartitionPropertyAndDeterminism) {
  Rng rng(5);
  for (int t = 0; t < 60; ++t) {
    const std::size_t n = 2 + rng.index(30);
    const auto ds = planted_dataset(n, t);
    const SplitSpec spec{.train_fraction = rng.uniform(0.05, 0.95), .seed = rng.bits()};
    const auto s = split_pairs(ds, spec);
    const auto tr = pair_ids(s.train), te = pair_ids(s.test);
    ASSERT_EQ(tr.size() + te.size(), n);
    for (const auto& id : tr) ASSERT_FALSE(te.contains(id));
    ASSERT_EQ(s.train.records.size() + s.test.records.size(), ds.records.size());
    ASSERT_FALSE(tr.empty());
    ASSERT_FALSE(te.empty());
    const auto expected = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(spec.train_fraction * static_cast<double>(n) - 1e-9)), 1, n - 1);
    ASSERT_EQ(tr.size(), expected);
    const auto again = split_pairs(ds, spec);
    ASSERT_EQ(again.train, s.train);
    ASSERT_EQ(again.test, s.test);
  }
}

TEST(Split, RejectsTooFewPairsAndBadFractions) {
  EXPECT_THROW(split_pairs(planted_dataset(1, 1), {}), DegenerateDataError);
  EXPECT_THROW(split_pairs(planted_dataset(4, 1), {.train_fraction = 1.0}), ValidationError);
  EXPECT_THROW(split_pairs(planted_dataset(4, 1), {.train_fraction = 0.0}), ValidationError);
}

TEST(Score, HandCountedExample) {
  const std::vector<Outcome> o = {{1, 1}, {1, 1}, {0, 1}, {1, 0}, {0, 0}, {0, 0}};
  const auto r = score(o);
  EXPECT_EQ(r.tp, 2u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.tn, 2u);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.accuracy, 4.0 / 6.0);
  EXPECT_TRUE(metrics_consistent(r));
}

TEST(Score, ZeroDenominatorAndEmptyInput) {
  const std::vector<Outcome> negatives = {{0, 0}, {0, 0}};
  const auto r = score(negatives);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_THROW(score(std::vector<Outcome>{}), DegenerateDataError);
}

TEST(Score, RandomOutcomesAgreeWithDefinition) {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    std::vector<Outcome> o(1 + rng.index(50));
    for (auto& x : o) x = {static_cast<std::uint8_t>(rng.index(2)), static_cast<std::uint8_t>(rng.index(2))};
    const auto r = score(o);
    double tp = 0, fp = 0, fn = 0, correct = 0;
    for (const auto& x : o) {
      tp += x.truth && x.predicted;
      fp += !x.truth && x.predicted;
      fn += x.truth && !x.predicted;
      correct += x.truth == x.predicted;
    }
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0, rec = tp + fn > 0 ? tp / (tp + fn) : 0;
    ASSERT_NEAR(r.f1, prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0, 1e-12);
    ASSERT_NEAR(r.accuracy, correct / o.size(), 1e-12);
  }
}

TEST(TransferDelta, ForcedArithmetic) {
  EXPECT_EQ(transfer_delta(0.8, 0.6), -0.25);
  EXPECT_EQ(transfer_delta(0.5, 0.6), 0.2);
  EXPECT_EQ(transfer_delta(0.25, 1.0), 3.0);
  EXPECT_EQ(transfer_delta(0.7, 0.7), 0.0);
  EXPECT_THROW(transfer_delta(0.0, 0.5), UndefinedTransferError);
  EXPECT_FALSE(make_transfer_cell("a", "b", 0.0, 0.4).delta.has_value());
}

TEST(TransferDelta, CloseToBinaryFormulaOnRandomInputs) {
  Rng rng(29);
  for (int t = 0; t < 2000; ++t) {
    const double s = rng.uniform(1e-3, 1.0), g = rng.uniform(0.0, 1.0);
    const double plain = (g - s) / s;
    ASSERT_NEAR(transfer_delta(s, g), plain, 1e-12 * std::max(1.0, std::abs(plain)));
    ASSERT_EQ(transfer_delta(s, s), 0.0);
  }
  EXPECT_NEAR(transfer_delta(1e-30, 0.5), (0.5 - 1e-30) / 1e-30, 1e-3 * 5e29);
}

TEST(Pipeline, PlantedSignalIsDetected) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 50;
  cfg.set_seed(7);
  const auto result = run_pipeline(planted_dataset(100, 3), SaeParams<double>::identity(16), cfg);
  EXPECT_GE(result.report.f1, 0.95);
  EXPECT_EQ(result.report.total(), 40u);
  std::vector<std::size_t> top3(result.selection.indices.begin(), result.selection.indices.begin() + 3);
  std::sort(top3.begin(), top3.end());
  EXPECT_EQ(top3, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_NEAR(std::accumulate(result.importances.begin(), result.importances.end(), 0.0), 1.0, 1e-9);
}

TEST(Pipeline, AllFeaturesEqualsFullWidthTopK) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 20;
  cfg.set_seed(2);
  const auto ds = planted_dataset(30, 9);
  const auto sae = SaeParams<double>::identity(16);
  cfg.top_k = 16;
  const auto a = run_pipeline(ds, sae, cfg);
  cfg.top_k = kAllFeatures;
  const auto b = run_pipeline(ds, sae, cfg);
  EXPECT_EQ(a.report, b.report);
  EXPECT_EQ(a.selection.indices, b.selection.indices);
}

TEST(Pipeline, ShuffledLabelsStayNearChance) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 50;
  cfg.set_seed(4);
  const auto ds = shuffle_labels(planted_dataset(100, 5), 99);
  const auto r = run_pipeline(ds, SaeParams<double>::identity(16), cfg).report;
  const double band = 2.576 * std::sqrt(0.25 / static_cast<double>(r.total()));
  EXPECT_NEAR(r.f1, 0.5, band);
}

TEST(Pipeline, LogisticBackendAlsoDetects) {
  PipelineConfig cfg;
  cfg.classifier = ClassifierKind::logistic;
  cfg.set_seed(1);
  const auto r = run_pipeline(planted_dataset(60, 8), SaeParams<double>::identity(16), cfg).report;
  EXPECT_GE(r.f1, 0.9);
  EXPECT_EQ(r.classifier_tag, "logistic_regression");
}

TEST(Pipeline, DeterministicGivenSeed) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 20;
  cfg.set_seed(12);
  const auto ds = planted_dataset(40, 2);
  const auto sae = SaeParams<double>::random(16, 32, 0.3, 4);
  const auto a = run_pipeline(ds, sae, cfg);
  cfg.jobs = 3;
  const auto b = run_pipeline(ds, sae, cfg);
  EXPECT_EQ(a.report, b.report);
  EXPECT_TRUE(std::get<ForestModel>(a.model) == std::get<ForestModel>(b.model));
}

TEST(Sweep, SingleLayerSingleTopKIsTheOneRun) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 15;
  cfg.set_seed(3);
  auto ds = planted_dataset(30, 1);
  const auto sae = SaeParams<double>::identity(16);
  const auto grid = sweep_layers({{ds, sae}}, {5}, cfg);
  ASSERT_EQ(grid.cells.size(), 1u);
  cfg.top_k = 5;
  EXPECT_EQ(*grid.cells[0].best, run_pipeline(ds, sae, cfg).report);
}

TEST(Sweep, IdenticalLayersGiveIdenticalCells) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 15;
  cfg.set_seed(3);
  const auto sae = SaeParams<double>::identity(16);
  std::vector<LayerInput> inputs;
  for (std::uint32_t layer : {4u, 8u, 12u}) {
    auto ds = planted_dataset(30, 1);
    ds.layer_index = layer;
    inputs.push_back({ds, sae});
  }
  const auto grid = sweep_layers(inputs, {2, 5, 10}, cfg, 3);
  EXPECT_EQ(grid.models.size(), 1u);
  EXPECT_EQ(grid.layers, (std::vector<std::uint32_t>{4, 8, 12}));
  for (const auto& c : grid.cells) {
    EXPECT_EQ(c.best->f1, grid.cells[0].best->f1);
    EXPECT_EQ(c.f1_by_top_k, grid.cells[0].f1_by_top_k);
    // best is the max with ties to the smaller k
    double best = -1;
    std::size_t best_k = 0;
    for (const auto& [k, f1] : c.f1_by_top_k) {
      if (f1 > best) best = f1, best_k = k;
    }
    EXPECT_EQ(c.best->top_k, best_k);
  }
}

TEST(Sweep, MissingSaeMarksCellAbsent) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 10;
  auto a = planted_dataset(20, 1), b = planted_dataset(20, 1);
  b.layer_index = 7;
  const auto grid = sweep_layers({{a, SaeParams<double>::identity(16)}, {b, std::nullopt}}, {3}, cfg);
  const auto* cell = grid.find("synthetic", 7);
  ASSERT_NE(cell, nullptr);
  EXPECT_FALSE(cell->best.has_value());
  EXPECT_FALSE(cell->note.empty());
  EXPECT_TRUE(grid.find("synthetic", a.layer_index)->best.has_value());
}

TEST(Transfer, TwoDomainsGiveFourCellsWithZeroDiagonal) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 20;
  cfg.set_seed(5);
  const auto sae = SaeParams<double>::identity(16);
  auto other = synth_paired_dataset({.n_pairs = 50, .d = 16, .planted_dims = {0, 1, 5}, .seed = 6});
  const auto cells = transfer_study({{"A", planted_dataset(50, 2), sae}, {"B", other, sae}}, cfg);
  ASSERT_EQ(cells.size(), 4u);
  for (const auto& c : cells) {
    if (c.source_tag == c.target_tag) {
      EXPECT_EQ(c.f1_target, c.f1_source);
      EXPECT_EQ(*c.delta, 0.0);
    } else if (c.delta) {
      EXPECT_NEAR(*c.delta, (c.f1_target - c.f1_source) / c.f1_source, 1e-12);
    }
  }
}

TEST(Transfer, EvaluatingOwnTestSplitReproducesSourceF1) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 20;
  cfg.set_seed(8);
  const auto ds = planted_dataset(40, 4);
  const auto sae = SaeParams<double>::identity(16);
  const auto run = run_pipeline(ds, sae, cfg);
  const auto test = split_pairs(ds, cfg.split).test;
  EXPECT_EQ(evaluate(run.model, run.selection, sae, test).f1, run.report.f1);
}

TEST(Activity, ForcedExamples) {
  CodeSet zeros;
  zeros.width = 4;
  for (int i = 0; i < 5; ++i) zeros.entries.push_back(testing::pooled_entry("p", kBuggy, {0, 0, 0, 0}));
  const auto s = latent_activity_stats(zeros);
  EXPECT_EQ(s.never_active, 4u);
  EXPECT_EQ(s.never_active_fraction(), 1.0);

  CodeSet three;
  three.width = 10;
  std::vector<double> v(10, 1.0);
  v[2] = v[5] = v[7] = 0.0;
  three.entries.push_back(testing::pooled_entry("p", kBuggy, v));
  EXPECT_DOUBLE_EQ(latent_activity_stats(three).never_active_fraction(), 0.3);
  EXPECT_THROW(latent_activity_stats(CodeSet{}), DegenerateDataError);
}

TEST(Activity, AgreesWithBruteForce) {
  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    const auto cs = testing::random_code_set(rng, 1 + rng.index(5), 1 + rng.index(30));
    const auto s = latent_activity_stats(cs);
    std::size_t never = 0;
    for (std::size_t j = 0; j < cs.width; ++j) {
      std::size_t hits = 0;
      for (const auto& e : cs.entries) hits += e.code.values[j] > kDefaultActivityEpsilon;
      never += hits == 0;
      ASSERT_DOUBLE_EQ(s.frequency[j], static_cast<double>(hits) / cs.size());
    }
    ASSERT_EQ(s.never_active, never);
  }
}

TEST(TokenReport, DeadFeatureSingletonAndConsistency) {
  const auto ds = planted_dataset(3, 2, 5);
  auto sae = SaeParams<double>::random(16, 8, 0.5, 3);
  sae.bias[4] = -1e6;  // feature 4 can never fire
  for (const auto& t : token_report(sae, ds.records[0], 4)) EXPECT_EQ(t.value, 0.0);

  ActivationRecord single = ds.records[0];
  single.token_count = 1;
  single.tokens.resize(16);
  const auto one = token_report(sae, single, 2);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].value, encode(sae, to_vector(single.token_row(0, 16))).values[2]);

  const auto tokens = encode_dataset(sae, ds, Granularity::token);
  for (std::size_t f = 0; f < 8; ++f) {
    const auto rep = token_report(sae, ds.records[1], f);
    ASSERT_EQ(rep.size(), 5u);
    for (const auto& e : tokens.entries) {
      if (e.snippet_id != ds.records[1].snippet_id) continue;
      EXPECT_EQ(rep[static_cast<std::size_t>(e.token_position)].value, e.code.values[f]);
    }
  }
  EXPECT_THROW(token_report(sae, ds.records[0], 8), ShapeError);
  ActivationRecord pooled_only = ds.records[0];
  pooled_only.token_count = 0;
  pooled_only.tokens.clear();
  EXPECT_THROW(token_report(sae, pooled_only, 0), MissingTokensError);
}

TEST(CumulativeImportance, ForcedCurves) {
  EXPECT_EQ(cumulative_importance(std::vector<double>{1.0}), std::vector<double>{1.0});
  const std::size_t m = 8;
  const auto curve = cumulative_importance(std::vector<double>(m, 1.0 / m));
  for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(curve[i], static_cast<double>(i + 1) / m, 1e-12);
  EXPECT_EQ(cumulative_importance(std::vector<double>{0.2, 0.5, 0.3}), (std::vector<double>{0.5, 0.8, 1.0}));
}

TEST(CumulativeImportance, TrainedForestCurveIsMonotoneAndEndsAtOne) {
  PipelineConfig cfg;
  cfg.forest.n_trees = 30;
  const auto run = run_pipeline(planted_dataset(50, 3), SaeParams<double>::identity(16), cfg);
  const auto curve = cumulative_importance(std::get<ForestModel>(run.model));
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i], curve[i - 1]);
  EXPECT_NEAR(curve.back(), 1.0, 1e-9);
}

}  // namespace
}  // namespace sbd
