#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include "sbd/code_set.hpp"
#include "sbd/forest.hpp"

namespace sbd {

struct ActivityStats {
  std::vector<double> frequency;  // fraction of codes where the feature is active
  std::size_t never_active = 0;
  std::size_t n_codes = 0;

  double never_active_fraction() const {
    return frequency.empty() ? 0.0 : static_cast<double>(never_active) / static_cast<double>(frequency.size());
  }
};

inline ActivityStats latent_activity_stats(const CodeSet& codes,
                                           double activity_epsilon = kDefaultActivityEpsilon) {
  if (codes.empty()) throw DegenerateDataError("activity statistics need at least one code");
  std::vector<std::size_t> active(codes.width, 0);
  for (const auto& e : codes.entries) {
    if (e.code.size() != codes.width) throw ShapeError("code '" + e.snippet_id + "' has the wrong width");
    for (std::size_t j = 0; j < codes.width; ++j) {
      if (e.code.values[static_cast<Eigen::Index>(j)] > activity_epsilon) ++active[j];
    }
  }
  ActivityStats s;
  s.n_codes = codes.size();
  s.frequency.resize(codes.width);
  for (std::size_t j = 0; j < codes.width; ++j) {
    s.frequency[j] = static_cast<double>(active[j]) / static_cast<double>(s.n_codes);
    if (active[j] == 0) ++s.never_active;
  }
  return s;
}

struct TokenActivation {
  std::uint32_t position = 0;
  double value = 0.0;
};

// Activation of one SAE feature on every token row of a record.
inline std::vector<TokenActivation> token_report(const SaeParams<double>& sae, const ActivationRecord& rec,
                                                 std::size_t feature_index) {
  if (feature_index >= sae.d_hid()) {
    throw ShapeError("feature " + std::to_string(feature_index) + " out of range for SAE with " +
                     std::to_string(sae.d_hid()) + " features");
  }
  if (rec.token_count == 0) {
    throw MissingTokensError("record '" + rec.snippet_id + "' is pooled-only; no token activations to report");
  }
  if (rec.tokens.size() != static_cast<std::size_t>(rec.token_count) * sae.d_in()) {
    throw ShapeError("record '" + rec.snippet_id + "' token width does not match SAE d_in " +
                     std::to_string(sae.d_in()));
  }
  std::vector<TokenActivation> out;
  out.reserve(rec.token_count);
  for (std::uint32_t t = 0; t < rec.token_count; ++t) {
    const auto code = encode(sae, to_vector(rec.token_row(t, sae.d_in())));
    out.push_back({t, code.values[static_cast<Eigen::Index>(feature_index)]});
  }
  return out;
}

// Importances sorted descending, then running sums.
inline std::vector<double> cumulative_importance(std::vector<double> importances) {
  std::sort(importances.begin(), importances.end(), std::greater<>());
  double running = 0.0;
  for (auto& v : importances) {
    running += v;
    v = running;
  }
  return importances;
}

inline std::vector<double> cumulative_importance(const ForestModel& model) {
  return cumulative_importance(feature_importances(model));
}

}  // namespace sbd
