#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>
#include <span>
#include <string>

#include "sbd/activation_store.hpp"
#include "sbd/errors.hpp"

namespace sbd {

struct Outcome {
  std::uint8_t truth = 0;
  std::uint8_t predicted = 0;
};

// Confusion counts on the buggy class plus provenance. f1 and accuracy are
// always recomputable from the counts.
struct EvalReport {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::string model_tag;       // LM the activations came from
  std::string classifier_tag;  // random_forest / logistic_regression
  std::string dataset_tag;
  std::uint32_t layer_index = 0;
  std::size_t top_k = 0;  // features the classifier actually saw

  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const EvalReport&) const = default;
};

// 2tp / (2tp + fp + fn); 0 when nothing was positive in truth or prediction.
inline double f1_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const std::uint64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

inline double accuracy_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn) {
  const std::uint64_t n = tp + fp + tn + fn;
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

inline EvalReport score(std::span<const Outcome> outcomes) {
  if (outcomes.empty()) {
    throw DegenerateDataError("cannot score an empty prediction set");
  }
  EvalReport r;
  for (const auto& o : outcomes) {
    const bool truth = o.truth == kBuggy;
    const bool pred = o.predicted == kBuggy;
    if (truth && pred) ++r.tp;
    else if (!truth && pred) ++r.fp;
    else if (!truth && !pred) ++r.tn;
    else ++r.fn;
  }
  r.f1 = f1_from_counts(r.tp, r.fp, r.fn);
  r.accuracy = accuracy_from_counts(r.tp, r.fp, r.tn, r.fn);
  return r;
}

// True when the stored metrics are exactly what the counts imply.
inline bool metrics_consistent(const EvalReport& r) {
  return r.total() > 0 && r.f1 == f1_from_counts(r.tp, r.fp, r.fn) &&
         r.accuracy == accuracy_from_counts(r.tp, r.fp, r.tn, r.fn);
}

namespace detail {

// Shortest round-trip decimal of v as mantissa * 10^exponent.
struct Decimal {
  std::int64_t mantissa = 0;
  int exponent = 0;
};

inline std::optional<Decimal> shortest_decimal(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific);
  if (ec != std::errc()) return std::nullopt;
  const std::string_view text(buf, static_cast<std::size_t>(end - buf));
  const auto e = text.find('e');
  Decimal d;
  int fraction_digits = 0;
  bool after_point = false, negative = false;
  for (char ch : text.substr(0, e)) {
    if (ch == '-') negative = true;
    else if (ch == '.') after_point = true;
    else {
      d.mantissa = d.mantissa * 10 + (ch - '0');
      fraction_digits += after_point;
    }
  }
  if (negative) d.mantissa = -d.mantissa;
  std::from_chars(text.data() + e + 1 + (text[e + 1] == '+'), text.data() + text.size(), d.exponent);
  d.exponent -= fraction_digits;
  return d;
}

}  // namespace detail

// Relative F1 shift when a model trained on the source dataset is evaluated
// on a target dataset: (f1_target - f1_source) / f1_source.
//
// Evaluated on the shortest decimal form of each F1 (the form reports print),
// so decimal inputs give the decimal answer: (0.8, 0.6) -> -0.25 exactly.
// Falls back to plain binary arithmetic when the exponents are far apart.
inline double transfer_delta(double f1_source, double f1_target) {
  if (!(f1_source > 0.0)) {
    throw UndefinedTransferError("relative F1 shift is undefined for a source F1 of " + std::to_string(f1_source));
  }
  const auto s = detail::shortest_decimal(f1_source), t = detail::shortest_decimal(f1_target);
  if (s && t && std::isfinite(f1_target)) {
    const int base = std::min(s->exponent, t->exponent);
    const int shift_s = s->exponent - base, shift_t = t->exponent - base;
    if (shift_s <= 18 && shift_t <= 18) {
      __int128 scale_s = 1, scale_t = 1;
      for (int i = 0; i < shift_s; ++i) scale_s *= 10;
      for (int i = 0; i < shift_t; ++i) scale_t *= 10;
      const __int128 S = s->mantissa * scale_s, T = t->mantissa * scale_t;
      // Exact whenever both integers fit a double's 53-bit significand.
      return static_cast<double>(T - S) / static_cast<double>(S);
    }
  }
  return (f1_target - f1_source) / f1_source;
}

}  // namespace sbd
