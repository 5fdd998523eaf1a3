#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sbd/activation_store.hpp"
#include "sbd/sae.hpp"

namespace sbd {

enum class Granularity : std::uint8_t { pooled, token };

inline const char* to_string(Granularity g) { return g == Granularity::pooled ? "pooled" : "token"; }

inline Granularity parse_granularity(const std::string& s) {
  if (s == "pooled") return Granularity::pooled;
  if (s == "token") return Granularity::token;
  throw ValidationError("unknown granularity '" + s + "' (expected pooled or token)");
}

struct CodeEntry {
  std::string snippet_id;
  std::string pair_id;
  std::uint8_t label = kPatched;
  std::int64_t token_position = -1;  // -1 at pooled granularity
  SparseCode<double> code;
};

struct CodeSet {
  Granularity granularity = Granularity::pooled;
  std::size_t width = 0;
  std::vector<CodeEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

inline Vector<double> to_vector(std::span<const float> v) {
  return Eigen::Map<const Eigen::VectorXf>(v.data(), static_cast<Eigen::Index>(v.size())).cast<double>();
}

// One code per record (pooled) or per token row (token), in dataset order.
// Pooled granularity uses the stored pooled vector, falling back to
// pool_tokens(record, fallback) for token-only records.
inline CodeSet encode_dataset(const SaeParams<double>& p, const ActivationDataset& ds,
                              Granularity granularity = Granularity::pooled, Pooling fallback = Pooling::mean,
                              double activity_epsilon = kDefaultActivityEpsilon) {
  if (ds.d != p.d_in()) {
    throw ShapeError("dataset width " + std::to_string(ds.d) + " does not match SAE d_in " +
                     std::to_string(p.d_in()));
  }
  CodeSet out;
  out.granularity = granularity;
  out.width = p.d_hid();
  for (const auto& rec : ds.records) {
    CodeEntry base{rec.snippet_id, rec.pair_id, rec.label, -1, {}};
    if (granularity == Granularity::pooled) {
      base.code = encode(p, to_vector(record_vector(rec, fallback)), activity_epsilon);
      out.entries.push_back(std::move(base));
      continue;
    }
    for (std::uint32_t t = 0; t < rec.token_count; ++t) {
      CodeEntry e = base;
      e.token_position = t;
      e.code = encode(p, to_vector(rec.token_row(t, ds.d)), activity_epsilon);
      out.entries.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace sbd
