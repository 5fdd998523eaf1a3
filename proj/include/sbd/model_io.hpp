#pragma once

#include <span>
#include <string>
#include <variant>

#include "sbd/binary_io.hpp"
#include "sbd/forest.hpp"
#include "sbd/logistic.hpp"

namespace sbd {

using Classifier = std::variant<ForestModel, LogisticModel>;

inline Prediction predict(const Classifier& model, const Vector<double>& x) {
  return std::visit([&](const auto& m) { return predict(m, x); }, model);
}

inline std::size_t n_features(const Classifier& model) {
  return std::visit(
      [](const auto& m) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, ForestModel>) {
          return m.n_features;
        } else {
          return m.n_features();
        }
      },
      model);
}

inline const char* classifier_tag(const Classifier& model) {
  return std::holds_alternative<ForestModel>(model) ? "random_forest" : "logistic_regression";
}

inline constexpr std::uint16_t kModelVersion = 1;

// SFM1: config, seed, then every tree's node array in preorder.
inline Bytes write_model(const ForestModel& m) {
  ByteWriter w;
  w.magic("SFM1");
  w.u16(kModelVersion);
  w.u32(static_cast<std::uint32_t>(m.n_features));
  w.u32(static_cast<std::uint32_t>(m.trees.size()));
  w.u32(static_cast<std::uint32_t>(m.config.max_depth));
  w.u32(static_cast<std::uint32_t>(m.config.min_samples_split));
  w.u32(static_cast<std::uint32_t>(m.config.max_features));
  w.u64(m.config.seed);
  for (const auto& tree : m.trees) {
    w.u32(static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& n : tree.nodes) {
      w.i32(n.feature);
      w.f64(n.threshold);
      w.u32(n.left);
      w.u32(n.right);
      w.u32(n.counts[0]);
      w.u32(n.counts[1]);
    }
  }
  return std::move(w).bytes();
}

// SLM1: config, seed, iteration count, bias, weights (all f64).
inline Bytes write_model(const LogisticModel& m) {
  ByteWriter w;
  w.magic("SLM1");
  w.u16(kModelVersion);
  w.u32(static_cast<std::uint32_t>(m.n_features()));
  w.u64(m.config.seed);
  w.f64(m.config.learning_rate);
  w.u64(m.config.max_iterations);
  w.f64(m.config.tolerance);
  w.f64(m.config.init_scale);
  w.u64(m.iterations);
  w.f64(m.bias);
  for (double v : m.weights) w.f64(v);
  return std::move(w).bytes();
}

inline Bytes write_model(const Classifier& m) {
  return std::visit([](const auto& x) { return write_model(x); }, m);
}

namespace detail {

inline void check_model_version(ByteReader& in, const char* kind) {
  const std::uint16_t v = in.u16();
  if (v != kModelVersion) {
    throw UnsupportedFormatError(std::string("unsupported ") + kind + " version " + std::to_string(v));
  }
}

inline ForestModel read_forest_body(ByteReader& in) {
  check_model_version(in, "SFM");
  ForestModel m;
  m.n_features = in.u32();
  m.config.n_trees = in.u32();
  m.config.max_depth = in.u32();
  m.config.min_samples_split = in.u32();
  m.config.max_features = in.u32();
  m.config.seed = in.u64();
  if (m.config.n_trees > in.remaining() / 4) {
    throw CorruptionError("tree count exceeds file size", in.offset());
  }
  m.trees.resize(m.config.n_trees);
  constexpr std::size_t kNodeBytes = 4 + 8 + 4 * 4;
  for (std::size_t t = 0; t < m.trees.size(); ++t) {
    in.set_record(static_cast<std::int64_t>(t));
    const std::uint32_t count = in.u32();
    if (count == 0) throw ValidationError("tree " + std::to_string(t) + " has no nodes");
    in.require(std::uint64_t{count} * kNodeBytes);
    auto& nodes = m.trees[t].nodes;
    nodes.resize(count);
    for (auto& n : nodes) {
      n.feature = in.i32();
      n.threshold = in.f64();
      n.left = in.u32();
      n.right = in.u32();
      n.counts[0] = in.u32();
      n.counts[1] = in.u32();
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      const std::string where = "tree " + std::to_string(t) + " node " + std::to_string(i);
      if (n.counts[0] == 0 && n.counts[1] == 0) throw ValidationError(where + " has no samples");
      if (n.is_leaf()) continue;
      if (static_cast<std::size_t>(n.feature) >= m.n_features) {
        throw ValidationError(where + " splits on out-of-range feature " + std::to_string(n.feature));
      }
      if (n.left <= i || n.right <= i || n.left >= count || n.right >= count) {
        throw ValidationError(where + " has invalid child links");
      }
    }
  }
  in.set_record(-1);
  return m;
}

inline LogisticModel read_logistic_body(ByteReader& in) {
  check_model_version(in, "SLM");
  LogisticModel m;
  const std::uint32_t n = in.u32();
  m.config.seed = in.u64();
  m.config.learning_rate = in.f64();
  m.config.max_iterations = in.u64();
  m.config.tolerance = in.f64();
  m.config.init_scale = in.f64();
  m.iterations = in.u64();
  m.bias = in.f64();
  in.require(std::uint64_t{n} * 8);
  m.weights.resize(n);
  for (auto& v : m.weights) v = in.f64();
  if (!m.weights.allFinite() || !std::isfinite(m.bias)) {
    throw ValidationError("logistic model parameters are not finite");
  }
  return m;
}

}  // namespace detail

inline Classifier read_model(std::span<const std::uint8_t> data) {
  ByteReader in(data);
  Classifier out;
  if (in.expect_magic("SFM1")) {
    out = detail::read_forest_body(in);
  } else if (in.expect_magic("SLM1")) {
    out = detail::read_logistic_body(in);
  } else {
    throw UnsupportedFormatError("not an SFM/SLM model file (bad magic)");
  }
  if (!in.at_end()) {
    throw CorruptionError(std::to_string(in.remaining()) + " trailing bytes after model", in.offset());
  }
  return out;
}

inline Classifier load_model(const std::string& path) { return read_model(read_file_bytes(path)); }

inline void save_model(const Classifier& m, const std::string& path) { write_file_bytes(path, write_model(m)); }

}  // namespace sbd
