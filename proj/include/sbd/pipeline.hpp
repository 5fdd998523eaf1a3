#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "sbd/code_set.hpp"
#include "sbd/feature_select.hpp"
#include "sbd/metrics.hpp"
#include "sbd/model_io.hpp"

namespace sbd {

// Requests every feature from best_k_features.
inline constexpr std::size_t kAllFeatures = std::numeric_limits<std::size_t>::max();

enum class SplitUnit : std::uint8_t { pair, record };

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  // `record` splits snippets independently; buggy/patched twins may then
  // straddle the split.
  SplitUnit unit = SplitUnit::pair;
};

struct DatasetSplit {
  ActivationDataset train;
  ActivationDataset test;
};

namespace detail {

inline ActivationDataset empty_like(const ActivationDataset& ds) {
  ActivationDataset out;
  out.model_name = ds.model_name;
  out.layer_index = ds.layer_index;
  out.d = ds.d;
  out.pooling = ds.pooling;
  return out;
}

// ceil(fraction * n), kept inside [1, n - 1] so neither side is empty.
inline std::size_t train_count(double fraction, std::size_t n) {
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

}  // namespace detail

// Shuffles the pair ids (in order of first appearance) with the seed, sends
// the first ceil(train_fraction * N) pairs to train. Records keep their
// original relative order within each side.
inline DatasetSplit split_pairs(const ActivationDataset& ds, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ValidationError("train_fraction must lie in (0, 1)");
  }
  DatasetSplit out{detail::empty_like(ds), detail::empty_like(ds)};
  Rng rng(spec.seed);
  if (spec.unit == SplitUnit::record) {
    if (ds.records.size() < 2) throw DegenerateDataError("record-level split needs at least 2 records");
    std::vector<std::size_t> order(ds.records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<bool> in_train(ds.records.size(), false);
    const std::size_t k = detail::train_count(spec.train_fraction, order.size());
    for (std::size_t i = 0; i < k; ++i) in_train[order[i]] = true;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      (in_train[i] ? out.train : out.test).records.push_back(ds.records[i]);
    }
    return out;
  }
  std::vector<std::string> pair_ids;
  std::set<std::string> seen;
  for (const auto& r : ds.records) {
    if (seen.insert(r.pair_id).second) pair_ids.push_back(r.pair_id);
  }
  if (pair_ids.size() < 2) {
    throw DegenerateDataError("pair-level split needs at least 2 pairs, dataset has " +
                              std::to_string(pair_ids.size()));
  }
  rng.shuffle(pair_ids);
  const std::size_t k = detail::train_count(spec.train_fraction, pair_ids.size());
  const std::set<std::string> train_ids(pair_ids.begin(), pair_ids.begin() + static_cast<std::ptrdiff_t>(k));
  for (const auto& r : ds.records) {
    (train_ids.count(r.pair_id) ? out.train : out.test).records.push_back(r);
  }
  return out;
}

enum class ClassifierKind : std::uint8_t { forest, logistic };

struct PipelineConfig {
  std::size_t top_k = 10;
  SplitSpec split;
  ClassifierKind classifier = ClassifierKind::forest;
  ForestConfig forest;
  LogisticConfig logistic;
  // Compute the feature delta over every pair (train and test) instead of the
  // training split only.
  bool delta_on_full_dataset = false;
  Pooling pooling_fallback = Pooling::mean;
  double activity_epsilon = kDefaultActivityEpsilon;
  std::string dataset_tag;
  std::size_t jobs = 1;

  // Points every stage's seed at one value.
  void set_seed(std::uint64_t seed) {
    split.seed = seed;
    forest.seed = seed;
    logistic.seed = seed;
  }
};

struct PipelineResult {
  EvalReport report;
  FeatureSelection selection;
  Classifier model;
  std::vector<double> importances;  // forest only; indexed like selection.indices
};

inline Classifier fit_classifier(const LabeledSet& data, const PipelineConfig& cfg) {
  if (cfg.classifier == ClassifierKind::logistic) return fit_logistic(data, cfg.logistic);
  return fit_forest(data, cfg.forest, cfg.jobs);
}

// Scores a trained model on every record of `ds` (pair completeness not
// required).
inline EvalReport evaluate(const Classifier& model, const FeatureSelection& sel, const SaeParams<double>& sae,
                           const ActivationDataset& ds, Pooling fallback = Pooling::mean,
                           double activity_epsilon = kDefaultActivityEpsilon) {
  const CodeSet codes = encode_dataset(sae, ds, Granularity::pooled, fallback, activity_epsilon);
  const LabeledSet data = project_codes(codes, sel);
  std::vector<Outcome> outcomes;
  outcomes.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Prediction p = predict(model, data.features.row(static_cast<Eigen::Index>(i)).transpose());
    outcomes.push_back({data.labels[i], p.label});
  }
  EvalReport r = score(outcomes);
  r.model_tag = ds.model_name;
  r.classifier_tag = classifier_tag(model);
  r.layer_index = ds.layer_index;
  r.top_k = sel.size();
  return r;
}

// split -> encode -> delta on train -> top-k -> project -> fit -> score on test.
inline PipelineResult run_pipeline(const ActivationDataset& ds, const SaeParams<double>& sae,
                                   const PipelineConfig& cfg) {
  const DatasetSplit split = split_pairs(ds, cfg.split);
  const CodeSet train_codes = encode_dataset(sae, split.train, Granularity::pooled, cfg.pooling_fallback,
                                             cfg.activity_epsilon);
  FeatureDelta delta;
  if (cfg.delta_on_full_dataset) {
    delta = compute_delta(encode_dataset(sae, ds, Granularity::pooled, cfg.pooling_fallback, cfg.activity_epsilon));
  } else {
    delta = compute_delta(train_codes);
  }
  PipelineResult out;
  out.selection = best_k_features(delta, cfg.top_k);
  out.selection.model_name = ds.model_name;
  out.selection.layer_index = ds.layer_index;
  const LabeledSet train = build_training_set(train_codes, out.selection);
  out.model = fit_classifier(train, cfg);
  out.report = evaluate(out.model, out.selection, sae, split.test, cfg.pooling_fallback, cfg.activity_epsilon);
  out.report.dataset_tag = cfg.dataset_tag;
  if (const auto* forest = std::get_if<ForestModel>(&out.model)) {
    out.importances = feature_importances(*forest);
  }
  return out;
}

namespace detail {

// Runs task(i) for i in [0, n) on up to `jobs` threads; results go to slots
// indexed by i, so the output does not depend on scheduling.
template <typename Task>
void parallel_for(std::size_t n, std::size_t jobs, Task&& task) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::vector<std::exception_ptr> failures(jobs);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) task(i);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
}

}  // namespace detail

struct LayerInput {
  ActivationDataset data;
  std::optional<SaeParams<double>> sae;  // missing -> the cell is marked absent
};

struct SweepCell {
  std::string model_tag;
  std::uint32_t layer_index = 0;
  std::optional<EvalReport> best;  // highest F1 over the top-k sweep
  std::vector<std::pair<std::size_t, double>> f1_by_top_k;
  std::string note;
};

struct SweepGrid {
  std::vector<std::string> models;
  std::vector<std::uint32_t> layers;
  std::vector<SweepCell> cells;  // ordered by (model, layer)

  const SweepCell* find(const std::string& model, std::uint32_t layer) const {
    for (const auto& c : cells) {
      if (c.model_tag == model && c.layer_index == layer) return &c;
    }
    return nullptr;
  }
};

// One pipeline run per (layer, top_k); each cell keeps the best F1, ties
// going to the smaller top_k.
inline SweepGrid sweep_layers(const std::vector<LayerInput>& inputs, const std::vector<std::size_t>& top_ks,
                              PipelineConfig cfg, std::size_t jobs = 1) {
  if (inputs.empty()) throw ValidationError("sweep needs at least one layer");
  if (top_ks.empty()) throw ValidationError("sweep needs at least one top_k value");
  cfg.jobs = 1;
  std::vector<std::vector<std::optional<EvalReport>>> runs(inputs.size(),
                                                            std::vector<std::optional<EvalReport>>(top_ks.size()));
  detail::parallel_for(inputs.size() * top_ks.size(), jobs, [&](std::size_t task) {
    const std::size_t li = task / top_ks.size(), ki = task % top_ks.size();
    if (!inputs[li].sae) return;
    PipelineConfig local = cfg;
    local.top_k = top_ks[ki];
    runs[li][ki] = run_pipeline(inputs[li].data, *inputs[li].sae, local).report;
  });

  std::map<std::pair<std::string, std::uint32_t>, SweepCell> by_key;
  for (std::size_t li = 0; li < inputs.size(); ++li) {
    const auto& ds = inputs[li].data;
    SweepCell cell;
    cell.model_tag = ds.model_name;
    cell.layer_index = ds.layer_index;
    if (!inputs[li].sae) {
      cell.note = "no SAE for this layer";
    }
    for (std::size_t ki = 0; ki < top_ks.size(); ++ki) {
      const auto& r = runs[li][ki];
      if (!r) continue;
      cell.f1_by_top_k.emplace_back(top_ks[ki], r->f1);
      if (!cell.best || r->f1 > cell.best->f1 || (r->f1 == cell.best->f1 && r->top_k < cell.best->top_k)) {
        cell.best = *r;
      }
    }
    if (!by_key.emplace(std::pair{cell.model_tag, cell.layer_index}, std::move(cell)).second) {
      throw ValidationError("duplicate sweep cell for model '" + ds.model_name + "' layer " +
                            std::to_string(ds.layer_index));
    }
  }
  SweepGrid grid;
  std::set<std::string> models;
  std::set<std::uint32_t> layers;
  for (auto& [key, cell] : by_key) {
    models.insert(key.first);
    layers.insert(key.second);
    grid.cells.push_back(std::move(cell));
  }
  grid.models.assign(models.begin(), models.end());
  grid.layers.assign(layers.begin(), layers.end());
  return grid;
}

struct TransferCell {
  std::string source_tag;
  std::string target_tag;
  double f1_source = 0.0;
  double f1_target = 0.0;
  std::optional<double> delta;  // empty when the source F1 is 0
};

struct TransferSource {
  std::string tag;
  SaeParams<double> sae;
  FeatureSelection selection;
  Classifier model;
  double f1_source = 0.0;  // on the source's own test split
};

struct TransferTarget {
  std::string tag;
  ActivationDataset test;
};

inline TransferCell make_transfer_cell(std::string source, std::string target, double f1_source, double f1_target) {
  TransferCell cell{std::move(source), std::move(target), f1_source, f1_target, std::nullopt};
  if (f1_source > 0.0) cell.delta = transfer_delta(f1_source, f1_target);
  return cell;
}

// One cell per ordered (source, target); diagonal cells carry delta = 0.
inline std::vector<TransferCell> transfer_matrix(const std::vector<TransferSource>& sources,
                                                 const std::vector<TransferTarget>& targets,
                                                 Pooling fallback = Pooling::mean) {
  std::vector<TransferCell> cells;
  for (const auto& s : sources) {
    for (const auto& t : targets) {
      const double f1_target =
          s.tag == t.tag ? s.f1_source : evaluate(s.model, s.selection, s.sae, t.test, fallback).f1;
      cells.push_back(make_transfer_cell(s.tag, t.tag, s.f1_source, f1_target));
    }
  }
  return cells;
}

struct TransferDomain {
  std::string tag;
  ActivationDataset data;
  SaeParams<double> sae;
};

// Trains one pipeline per domain and evaluates each on every domain's test split.
inline std::vector<TransferCell> transfer_study(const std::vector<TransferDomain>& domains, PipelineConfig cfg) {
  std::vector<TransferSource> sources;
  std::vector<TransferTarget> targets;
  for (const auto& d : domains) {
    cfg.dataset_tag = d.tag;
    PipelineResult run = run_pipeline(d.data, d.sae, cfg);
    sources.push_back({d.tag, d.sae, std::move(run.selection), std::move(run.model), run.report.f1});
    targets.push_back({d.tag, split_pairs(d.data, cfg.split).test});
  }
  return transfer_matrix(sources, targets, cfg.pooling_fallback);
}

}  // namespace sbd
