#include <algorithm>
#include <cmath>
#include <numeric>

#include "trialbridge/engines.hpp"
#include "trialbridge/error.hpp"
#include "trialbridge/parallel.hpp"
#include "trialbridge/rng.hpp"

namespace trialbridge {

namespace {

struct Candidate {
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;
};

double gini_sum(double n, double pos) {
  if (n <= 0.0) return 0.0;
  const double p = pos / n;
  return n * 2.0 * p * (1.0 - p);
}

class TreeGrower {
 public:
  TreeGrower(const Eigen::MatrixXd& X, std::span<const double> y, const std::vector<int>& features,
             const ForestParams& params, int mtry)
      : X_(X), y_(y), features_(features), params_(params), mtry_(mtry) {}

  Tree grow(std::vector<std::size_t> rows, Rng& rng) {
    Tree tree;
    struct Pending {
      int node;
      std::vector<std::size_t> rows;
      int depth;
    };
    tree.nodes.push_back({});
    std::vector<Pending> stack;
    stack.push_back({0, std::move(rows), 0});
    while (!stack.empty()) {
      Pending cur = std::move(stack.back());
      stack.pop_back();
      double pos = 0.0;
      for (auto r : cur.rows) pos += y_[r];
      const double n = static_cast<double>(cur.rows.size());
      tree.nodes[static_cast<std::size_t>(cur.node)].value = n > 0 ? pos / n : 0.0;

      const bool depth_stop = params_.max_depth >= 0 && cur.depth >= params_.max_depth;
      const bool size_stop = cur.rows.size() < 2 * static_cast<std::size_t>(std::max(1, params_.min_leaf));
      if (depth_stop || size_stop || pos == 0.0 || pos == n) continue;

      const Candidate best = best_split(cur.rows, pos, rng);
      if (best.feature < 0) continue;

      std::vector<std::size_t> left, right;
      for (auto r : cur.rows) {
        (X_(static_cast<Eigen::Index>(r), best.feature) <= best.threshold ? left : right).push_back(r);
      }
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      auto& node = tree.nodes[static_cast<std::size_t>(cur.node)];
      node.feature = best.feature;
      node.threshold = best.threshold;
      node.left = l;
      node.right = l + 1;
      stack.push_back({l + 1, std::move(right), cur.depth + 1});
      stack.push_back({l, std::move(left), cur.depth + 1});
    }
    return tree;
  }

 private:
  Candidate best_split(const std::vector<std::size_t>& rows, double pos, Rng& rng) {
    std::vector<int> pool = features_;
    const int take = std::min<int>(mtry_, static_cast<int>(pool.size()));
    for (int k = 0; k < take; ++k) {
      const auto pick = static_cast<std::size_t>(k) + uniform_index(rng, pool.size() - static_cast<std::size_t>(k));
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick]);
    }
    const double n = static_cast<double>(rows.size());
    Candidate best;
    best.impurity = gini_sum(n, pos) - 1e-12;
    const std::size_t min_leaf = static_cast<std::size_t>(std::max(1, params_.min_leaf));

    std::vector<std::pair<double, std::size_t>> order(rows.size());
    for (int k = 0; k < take; ++k) {
      const int f = pool[static_cast<std::size_t>(k)];
      for (std::size_t i = 0; i < rows.size(); ++i) order[i] = {X_(static_cast<Eigen::Index>(rows[i]), f), rows[i]};
      std::sort(order.begin(), order.end());
      double left_pos = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left_pos += y_[order[i].second];
        const std::size_t nl = i + 1;
        if (nl < min_leaf || order.size() - nl < min_leaf) continue;
        if (order[i].first == order[i + 1].first) continue;
        const double imp = gini_sum(static_cast<double>(nl), left_pos) +
                           gini_sum(n - static_cast<double>(nl), pos - left_pos);
        if (imp < best.impurity) {
          best = {f, 0.5 * (order[i].first + order[i + 1].first), imp};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  std::span<const double> y_;
  const std::vector<int>& features_;
  const ForestParams& params_;
  int mtry_;
};

}  // namespace

FittedModel fit_forest(const DesignMatrix& X, std::span<const double> y, const ForestParams& params) {
  if (params.n_trees < 1) fail(ErrorKind::Model, "forest needs at least one tree");
  const auto n = static_cast<std::size_t>(X.rows());
  if (y.size() != n) fail(ErrorKind::Model, "outcome length does not match the design");
  bool has0 = false, has1 = false;
  for (double v : y) {
    if (v != 0.0 && v != 1.0) fail(ErrorKind::Model, "forest outcome must be 0 or 1");
    (v == 1.0 ? has1 : has0) = true;
  }
  if (!has0 || !has1) fail(ErrorKind::Model, "degenerate forest outcome: only one class present");

  std::vector<int> features;
  for (std::size_t c = 0; c < X.labels.size(); ++c) {
    if (X.labels[c] != kInterceptLabel) features.push_back(static_cast<int>(c));
  }
  const int p = static_cast<int>(features.size());
  const int mtry = params.mtry > 0 ? std::min(params.mtry, std::max(p, 1))
                                   : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p))));

  FittedModel m;
  m.family = ModelFamily::Forest;
  m.labels = X.labels;
  m.trees.resize(static_cast<std::size_t>(params.n_trees));
  TreeGrower grower(X.values, y, features, params, mtry);
  parallel_for(m.trees.size(), [&](std::size_t t) {
    Rng rng = substream(params.seed, "forest-tree", t);
    std::vector<std::size_t> boot(n);
    for (auto& r : boot) r = uniform_index(rng, n);
    m.trees[t] = grower.grow(std::move(boot), rng);
  });
  m.convergence = {true, params.n_trees, 0.0};
  return m;
}

std::vector<double> predict_forest(const FittedModel& model, const DesignMatrix& X) {
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& tree : model.trees) {
      int node = 0;
      while (tree.nodes[static_cast<std::size_t>(node)].feature >= 0) {
        const auto& nd = tree.nodes[static_cast<std::size_t>(node)];
        node = X.values(static_cast<Eigen::Index>(i), nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      sum += tree.nodes[static_cast<std::size_t>(node)].value;
    }
    out[i] = std::clamp(sum / static_cast<double>(model.trees.size()), 0.0, 1.0);
  }
  return out;
}

}  // namespace trialbridge
