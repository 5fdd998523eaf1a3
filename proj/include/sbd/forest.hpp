#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>
#include <vector>

#include "sbd/errors.hpp"
#include "sbd/feature_select.hpp"
#include "sbd/random.hpp"

namespace sbd {

struct Prediction {
  std::uint8_t label = 0;
  double score = 0.0;  // estimated probability of the buggy class
};

// Score ties at exactly 0.5 resolve to buggy.
inline std::uint8_t label_for_score(double score) { return score >= 0.5 ? kBuggy : kPatched; }

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 0;  // 0 = unlimited
  std::size_t min_samples_split = 2;
  std::size_t max_features = 0;  // per split; 0 = ceil(sqrt(width))
  std::uint64_t seed = 0;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x[feature] <= threshold goes left
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::array<std::uint32_t, 2> counts{};  // bootstrap samples per class reaching the node

  bool is_leaf() const { return feature < 0; }
  double buggy_fraction() const {
    const double n = static_cast<double>(counts[0]) + counts[1];
    return n > 0 ? counts[1] / n : 0.0;
  }
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const TreeNode& leaf_for(const double* x) const {
    const TreeNode* node = &nodes[0];
    while (!node->is_leaf()) {
      node = &nodes[x[node->feature] <= node->threshold ? node->left : node->right];
    }
    return *node;
  }
  std::size_t depth() const;
  bool operator==(const DecisionTree&) const = default;
};

inline std::size_t DecisionTree::depth() const {
  std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
  std::size_t deepest = 0;
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (!nodes[i].is_leaf()) {
      stack.push_back({nodes[i].left, d + 1});
      stack.push_back({nodes[i].right, d + 1});
    }
  }
  return deepest;
}

struct ForestModel {
  ForestConfig config;  // max_features resolved to the value actually used
  std::size_t n_features = 0;
  std::vector<DecisionTree> trees;

  bool operator==(const ForestModel& o) const {
    return n_features == o.n_features && trees == o.trees && config.n_trees == o.config.n_trees &&
           config.max_depth == o.config.max_depth && config.min_samples_split == o.config.min_samples_split &&
           config.max_features == o.config.max_features && config.seed == o.config.seed;
  }
};

namespace detail {

inline void check_training_data(const LabeledSet& data) {
  if (static_cast<std::size_t>(data.features.rows()) != data.labels.size()) {
    throw ShapeError("feature matrix has " + std::to_string(data.features.rows()) + " rows but " +
                     std::to_string(data.labels.size()) + " labels");
  }
  if (data.size() < 2) {
    throw DegenerateDataError("classifier needs at least 2 samples");
  }
  if (data.width() == 0) {
    throw ShapeError("classifier needs at least one feature");
  }
  const auto buggy = std::count(data.labels.begin(), data.labels.end(), kBuggy);
  if (buggy == 0 || static_cast<std::size_t>(buggy) == data.size()) {
    throw DegenerateDataError("classifier needs both classes in the training data");
  }
  if (!data.features.allFinite()) {
    throw ValidationError("classifier features contain NaN or Inf");
  }
}

inline double gini(double n0, double n1) {
  const double n = n0 + n1;
  if (n <= 0) return 0.0;
  const double p0 = n0 / n, p1 = n1 / n;
  return 1.0 - p0 * p0 - p1 * p1;
}

class TreeBuilder {
 public:
  TreeBuilder(const LabeledSet& data, const ForestConfig& cfg, Rng& rng) : data_(data), cfg_(cfg), rng_(rng) {
    features_.resize(data.width());
  }

  DecisionTree build(std::vector<std::uint32_t> samples) {
    tree_.nodes.clear();
    grow(std::move(samples), 0);
    return std::move(tree_);
  }

 private:
  struct Split {
    std::int32_t feature = -1;
    double threshold = 0.0;
    double impurity = 0.0;
  };

  std::uint32_t grow(std::vector<std::uint32_t> samples, std::size_t depth) {
    const std::uint32_t id = static_cast<std::uint32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    TreeNode node;
    for (auto s : samples) ++node.counts[data_.labels[s]];

    const bool pure = node.counts[0] == 0 || node.counts[1] == 0;
    const bool depth_capped = cfg_.max_depth != 0 && depth >= cfg_.max_depth;
    if (pure || depth_capped || samples.size() < cfg_.min_samples_split) {
      tree_.nodes[id] = node;
      return id;
    }
    const Split split = find_split(samples);
    if (split.feature < 0) {
      tree_.nodes[id] = node;
      return id;
    }
    std::vector<std::uint32_t> left, right;
    for (auto s : samples) {
      (data_.features(s, split.feature) <= split.threshold ? left : right).push_back(s);
    }
    samples = {};
    node.feature = split.feature;
    node.threshold = split.threshold;
    tree_.nodes[id] = node;
    const std::uint32_t l = grow(std::move(left), depth + 1);
    const std::uint32_t r = grow(std::move(right), depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  // Visits features in a random order until max_features non-constant ones
  // have been evaluated; the lowest weighted Gini wins, first found on ties.
  Split find_split(std::vector<std::uint32_t>& samples) {
    const std::size_t n_features = features_.size();
    std::iota(features_.begin(), features_.end(), std::uint32_t{0});
    Split best;
    best.impurity = std::numeric_limits<double>::infinity();
    std::size_t evaluated = 0;
    const double n = static_cast<double>(samples.size());
    for (std::size_t i = 0; i < n_features && evaluated < cfg_.max_features; ++i) {
      std::swap(features_[i], features_[i + rng_.index(n_features - i)]);
      const std::uint32_t f = features_[i];
      std::sort(samples.begin(), samples.end(), [&](std::uint32_t a, std::uint32_t b) {
        const double va = data_.features(a, f), vb = data_.features(b, f);
        return va != vb ? va < vb : a < b;
      });
      if (data_.features(samples.front(), f) == data_.features(samples.back(), f)) continue;
      ++evaluated;

      std::array<double, 2> total{};
      for (auto s : samples) total[data_.labels[s]] += 1;
      std::array<double, 2> left{};
      for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
        left[data_.labels[samples[k]]] += 1;
        const double lo = data_.features(samples[k], f);
        const double hi = data_.features(samples[k + 1], f);
        if (lo == hi) continue;
        const double nl = static_cast<double>(k + 1);
        const double nr = n - nl;
        const double impurity =
            (nl * gini(left[0], left[1]) + nr * gini(total[0] - left[0], total[1] - left[1])) / n;
        if (impurity < best.impurity) {
          best.impurity = impurity;
          best.feature = static_cast<std::int32_t>(f);
          double mid = lo + (hi - lo) / 2.0;
          if (!(mid < hi)) mid = lo;
          best.threshold = mid;
        }
      }
    }
    return best;
  }

  const LabeledSet& data_;
  const ForestConfig& cfg_;
  Rng& rng_;
  std::vector<std::uint32_t> features_;
  DecisionTree tree_;
};

inline DecisionTree grow_tree(const LabeledSet& data, const ForestConfig& cfg, std::size_t tree_index) {
  Rng rng(derive_seed(cfg.seed, tree_index));
  std::vector<std::uint32_t> bootstrap(data.size());
  for (auto& s : bootstrap) s = static_cast<std::uint32_t>(rng.index(data.size()));
  TreeBuilder builder(data, cfg, rng);
  return builder.build(std::move(bootstrap));
}

}  // namespace detail

// Bagged CART trees with Gini splits. Tree i draws from its own stream
// derived from (seed, i), so any `jobs` value produces the same forest.
inline ForestModel fit_forest(const LabeledSet& data, ForestConfig cfg, std::size_t jobs = 1) {
  detail::check_training_data(data);
  if (cfg.n_trees == 0) {
    throw ValidationError("forest needs at least one tree");
  }
  cfg.min_samples_split = std::max<std::size_t>(cfg.min_samples_split, 2);
  if (cfg.max_features == 0) {
    cfg.max_features = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(data.width()))));
  }
  cfg.max_features = std::min(cfg.max_features, data.width());

  ForestModel model;
  model.config = cfg;
  model.n_features = data.width();
  model.trees.resize(cfg.n_trees);
  jobs = std::clamp<std::size_t>(jobs, 1, cfg.n_trees);
  if (jobs == 1) {
    for (std::size_t t = 0; t < cfg.n_trees; ++t) model.trees[t] = detail::grow_tree(data, cfg, t);
    return model;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> failures(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t t = w; t < cfg.n_trees; t += jobs) model.trees[t] = detail::grow_tree(data, cfg, t);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& th : workers) th.join();
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return model;
}

inline Prediction predict(const ForestModel& model, const Vector<double>& x) {
  if (static_cast<std::size_t>(x.size()) != model.n_features) {
    throw ShapeError("forest expects " + std::to_string(model.n_features) + " features, got " +
                     std::to_string(x.size()));
  }
  double sum = 0.0;
  for (const auto& tree : model.trees) sum += tree.leaf_for(x.data()).buggy_fraction();
  Prediction p;
  p.score = model.trees.empty() ? 0.0 : sum / static_cast<double>(model.trees.size());
  p.label = label_for_score(p.score);
  return p;
}

// Mean decrease in Gini impurity, weighted by the fraction of the tree's
// bootstrap sample reaching each split; normalized per tree, averaged over
// trees, then normalized to sum to 1. All zeros when no tree ever split.
inline std::vector<double> feature_importances(const ForestModel& model) {
  std::vector<double> total(model.n_features, 0.0);
  for (const auto& tree : model.trees) {
    std::vector<double> local(model.n_features, 0.0);
    const auto& root = tree.nodes[0];
    const double n_root = static_cast<double>(root.counts[0]) + root.counts[1];
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) continue;
      const auto& l = tree.nodes[node.left];
      const auto& r = tree.nodes[node.right];
      auto weighted = [](const TreeNode& t) {
        return (static_cast<double>(t.counts[0]) + t.counts[1]) * detail::gini(t.counts[0], t.counts[1]);
      };
      local[node.feature] += std::max(0.0, weighted(node) - weighted(l) - weighted(r)) / n_root;
    }
    const double sum = std::accumulate(local.begin(), local.end(), 0.0);
    if (sum > 0) {
      for (std::size_t j = 0; j < local.size(); ++j) total[j] += local[j] / sum;
    }
  }
  const double sum = std::accumulate(total.begin(), total.end(), 0.0);
  if (sum > 0) {
    for (auto& v : total) v /= sum;
  }
  return total;
}

}  // namespace sbd
