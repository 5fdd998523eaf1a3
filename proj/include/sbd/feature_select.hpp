#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "sbd/code_set.hpp"

namespace sbd {

// Mean absolute buggy-minus-patched code difference per SAE feature.
struct FeatureDelta {
  std::vector<double> delta;
  std::size_t n_pairs = 0;
};

struct FeatureSelection {
  std::vector<std::size_t> indices;  // Delta descending, index ascending on ties
  std::size_t top_k = 0;             // as requested, before clamping
  std::vector<double> delta_snapshot;
  std::string model_name;
  std::uint32_t layer_index = 0;

  std::size_t size() const { return indices.size(); }
};

// (buggy, patched) entry indices for each pair, in order of the pair's first
// appearance in the code set.
struct CodePair {
  std::string pair_id;
  std::size_t buggy = 0;
  std::size_t patched = 0;
};

inline std::vector<CodePair> pair_codes(const CodeSet& codes) {
  if (codes.granularity != Granularity::pooled) {
    throw ValidationError("pairwise feature statistics need one code per snippet (pooled granularity)");
  }
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<CodePair> pairs;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < codes.entries.size(); ++i) {
    const auto& e = codes.entries[i];
    if (e.code.size() != codes.width) {
      throw ShapeError("code '" + e.snippet_id + "' has width " + std::to_string(e.code.size()) + ", expected " +
                       std::to_string(codes.width));
    }
    auto [it, inserted] = slot.try_emplace(e.pair_id, pairs.size());
    if (inserted) pairs.push_back({e.pair_id, kUnset, kUnset});
    std::size_t& member = e.label == kBuggy ? pairs[it->second].buggy : pairs[it->second].patched;
    if (member != kUnset) {
      throw ValidationError("pair '" + e.pair_id + "' has two " + (e.label == kBuggy ? "buggy" : "patched") +
                            " codes");
    }
    member = i;
  }
  for (const auto& p : pairs) {
    if (p.buggy == kUnset || p.patched == kUnset) {
      throw ValidationError("pair '" + p.pair_id + "' is incomplete: missing its " +
                            (p.buggy == kUnset ? "buggy" : "patched") + " member");
    }
  }
  return pairs;
}

inline FeatureDelta compute_delta(const CodeSet& codes) {
  const auto pairs = pair_codes(codes);
  if (pairs.empty()) {
    throw DegenerateDataError("feature delta needs at least one complete pair");
  }
  FeatureDelta fd;
  fd.delta.assign(codes.width, 0.0);
  for (const auto& p : pairs) {
    const auto& buggy = codes.entries[p.buggy].code.values;
    const auto& patched = codes.entries[p.patched].code.values;
    for (std::size_t j = 0; j < codes.width; ++j) {
      fd.delta[j] += std::abs(buggy[j] - patched[j]);
    }
  }
  fd.n_pairs = pairs.size();
  for (auto& v : fd.delta) v /= static_cast<double>(fd.n_pairs);
  return fd;
}

// top_k larger than the feature count selects every feature.
inline FeatureSelection best_k_features(const FeatureDelta& fd, std::size_t top_k) {
  if (top_k == 0) {
    throw ValidationError("top_k must be at least 1");
  }
  std::vector<std::size_t> order(fd.delta.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::min(top_k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (fd.delta[a] != fd.delta[b]) return fd.delta[a] > fd.delta[b];
                      return a < b;
                    });
  order.resize(k);
  FeatureSelection sel;
  sel.indices = std::move(order);
  sel.top_k = top_k;
  sel.delta_snapshot = fd.delta;
  return sel;
}

inline Vector<double> project(const Vector<double>& values, const FeatureSelection& sel) {
  Vector<double> out(static_cast<Eigen::Index>(sel.indices.size()));
  for (std::size_t i = 0; i < sel.indices.size(); ++i) {
    const std::size_t j = sel.indices[i];
    if (j >= static_cast<std::size_t>(values.size())) {
      throw ShapeError("selected feature " + std::to_string(j) + " out of range for code of width " +
                       std::to_string(values.size()));
    }
    out[static_cast<Eigen::Index>(i)] = values[static_cast<Eigen::Index>(j)];
  }
  return out;
}

inline Vector<double> project(const SparseCode<double>& code, const FeatureSelection& sel) {
  return project(code.values, sel);
}

// Classifier input: one row per sample, labels 1 = buggy, 0 = patched.
struct LabeledSet {
  Matrix<double> features;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t width() const { return static_cast<std::size_t>(features.cols()); }
};

// Each pair contributes (projected buggy, 1) then (projected patched, 0).
inline LabeledSet build_training_set(const CodeSet& codes, const FeatureSelection& sel) {
  const auto pairs = pair_codes(codes);
  LabeledSet out;
  out.features.resize(static_cast<Eigen::Index>(2 * pairs.size()), static_cast<Eigen::Index>(sel.size()));
  out.labels.reserve(2 * pairs.size());
  Eigen::Index row = 0;
  for (const auto& p : pairs) {
    out.features.row(row++) = project(codes.entries[p.buggy].code, sel).transpose();
    out.labels.push_back(kBuggy);
    out.features.row(row++) = project(codes.entries[p.patched].code, sel).transpose();
    out.labels.push_back(kPatched);
  }
  return out;
}

// Every code in dataset order, projected; used to score held-out data
// without requiring pair completeness.
inline LabeledSet project_codes(const CodeSet& codes, const FeatureSelection& sel) {
  LabeledSet out;
  out.features.resize(static_cast<Eigen::Index>(codes.size()), static_cast<Eigen::Index>(sel.size()));
  for (std::size_t i = 0; i < codes.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = project(codes.entries[i].code, sel).transpose();
    out.labels.push_back(codes.entries[i].label);
  }
  return out;
}

}  // namespace sbd
