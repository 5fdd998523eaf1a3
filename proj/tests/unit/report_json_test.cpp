#include <gtest/gtest.h>

#include "sbd/analysis.hpp"
#include "sbd/pipeline.hpp"
#include "sbd/report_json.hpp"

namespace sbd {
namespace {

Json pipeline_document(std::uint64_t seed) {
  const auto ds = synth_paired_dataset({.n_pairs = 30, .d = 16, .planted_dims = {0, 1, 2}, .seed = 1});
  PipelineConfig cfg;
  cfg.forest.n_trees = 20;
  cfg.set_seed(seed);
  const auto run = run_pipeline(ds, SaeParams<double>::identity(16), cfg);
  RunManifest m;
  m.command = "pipeline";
  m.config = {{"top_k", cfg.top_k}};
  m.inputs = {{"data.sab", content_digest(write_dataset(ds))}};
  m.seeds = {{"split", seed}};
  Json doc = make_document("pipeline", m);
  doc["report"] = to_json(run.report);
  doc["selection"] = to_json(run.selection);
  doc["importance"] = {{"cumulative", cumulative_importance(run.importances)}};
  return doc;
}

TEST(ReportJson, SameSeedGivesByteIdenticalDocuments) {
  EXPECT_EQ(dump(pipeline_document(4)), dump(pipeline_document(4)));
  const Json doc = pipeline_document(4);
  EXPECT_EQ(doc["schema"], kReportSchema);
  EXPECT_EQ(doc["manifest"]["tool_version"], kToolVersion);
  EXPECT_EQ(doc["manifest"]["inputs"][0]["digest"].get<std::string>().size(), 16u);
}

TEST(ReportJson, RecheckAcceptsGenuineAndFlagsTampering) {
  Json doc = pipeline_document(5);
  EXPECT_TRUE(recheck_document(doc).empty());
  Json tampered = doc;
  tampered["report"]["fn"] = tampered["report"]["fn"].get<std::uint64_t>() + 1;
  EXPECT_EQ(recheck_document(tampered).size(), 1u);
  tampered = doc;
  tampered["importance"]["cumulative"] = {0.6, 0.5, 1.0};
  EXPECT_FALSE(recheck_document(tampered).empty());
  tampered = doc;
  tampered["schema"] = "other/2";
  EXPECT_FALSE(recheck_document(tampered).empty());
}

TEST(ReportJson, TransferCellsAreRechecked) {
  Json doc = make_document("transfer", {});
  doc["transfer"] = Json::array({to_json(make_transfer_cell("a", "b", 0.8, 0.6)),
                                 to_json(make_transfer_cell("b", "a", 0.0, 0.5))});
  EXPECT_TRUE(doc["transfer"][1]["delta"].is_null());
  EXPECT_TRUE(recheck_document(doc).empty());
  doc["transfer"][0]["delta"] = -0.2;
  EXPECT_EQ(recheck_document(doc).size(), 1u);
}

TEST(ReportJson, FloatsRoundTripExactly) {
  EvalReport r;
  r.tp = 7;
  r.fp = 3;
  r.fn = 2;
  r.tn = 9;
  r.f1 = f1_from_counts(7, 3, 2);
  r.accuracy = accuracy_from_counts(7, 3, 9, 2);
  r.model_tag = "m";
  r.classifier_tag = "random_forest";
  r.top_k = 12;
  EXPECT_EQ(eval_report_from_json(Json::parse(dump(to_json(r)))), r);
}

TEST(ReportJson, SelectionRoundTripAndValidation) {
  FeatureSelection s;
  s.indices = {3, 0};
  s.top_k = 2;
  s.delta_snapshot = {0.1, 0.0, 0.05, 0.7};
  s.model_name = "m";
  s.layer_index = 6;
  const auto back = selection_from_json(Json::parse(dump(to_json(s))));
  EXPECT_EQ(back.indices, s.indices);
  EXPECT_EQ(back.delta_snapshot, s.delta_snapshot);
  EXPECT_EQ(back.layer_index, 6u);
  Json bad = to_json(s);
  bad["indices"] = {9};
  EXPECT_THROW(selection_from_json(bad), ValidationError);
}

TEST(ReportCsv, HeaderAndRows) {
  EvalReport r;
  r.tp = 1;
  r.f1 = 1.0;
  r.accuracy = 1.0;
  const auto csv = to_csv(std::vector{r});
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(series_csv("cumulative", {0.5, 1.0}).substr(0, 10), "index,cumu");
}

}  // namespace
}  // namespace sbd
