#pragma once

#include <algorithm>
#include <random>
#include <string>

#include "apfl/topology/topology.hpp"
#include "support.hpp"

namespace apfl::testing {

// Root, two mid servers, three lower servers, nine clients: four tiers.
inline TreeTopology four_tier_tree() {
  return TreeTopology::from_parents({{"s1", "root"}, {"s2", "root"}, {"s3", "s1"}, {"s4", "s1"}, {"s5", "s2"},
                                     {"c1", "s3"}, {"c2", "s3"}, {"c3", "s4"}, {"c4", "s4"}, {"c5", "s5"},
                                     {"c6", "s5"}, {"c7", "s5"}, {"c8", "s5"}, {"c9", "s2"}});
}

inline TreeTopology random_tree(std::mt19937_64& rng) {
  const int inter = static_cast<int>(rng() % 7);
  std::map<std::string, std::string> parent;
  std::vector<std::string> internal{"root"};
  for (int i = 0; i < inter; ++i) {
    const std::string id = "s" + std::to_string(i);
    parent[id] = internal[rng() % internal.size()];
    internal.push_back(id);
  }
  int leaf = 0;
  auto add_leaf = [&](const std::string& under) { parent["c" + std::to_string(leaf++)] = under; };
  // every server needs at least one child
  for (const auto& node : internal) {
    const bool has_child = std::any_of(parent.begin(), parent.end(), [&](const auto& kv) { return kv.second == node; });
    if (!has_child) add_leaf(node);
  }
  const int extra = static_cast<int>(rng() % 8);
  for (int i = 0; i < extra; ++i) add_leaf(internal[rng() % internal.size()]);
  return TreeTopology::from_parents(parent);
}

inline std::vector<ModelUpdate> leaf_updates(std::mt19937_64& rng, const TreeTopology& tree, const ParameterSet& like) {
  std::vector<ModelUpdate> ups;
  for (const auto& leaf : tree.leaves()) {
    ModelUpdate u;
    u.client_id = leaf;
    u.params = random_like(rng, like);
    u.sample_count = 1 + rng() % 500;
    ups.push_back(std::move(u));
  }
  std::shuffle(ups.begin(), ups.end(), rng);
  return ups;
}

inline double worst_hier_vs_flat(std::mt19937_64& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const TreeTopology tree = t == 0 ? four_tier_tree() : random_tree(rng);
    const ParameterSet init = random_params(rng, DType::f64);
    const auto ups = leaf_updates(rng, tree, init);
    AggregatorState hier(init, {});
    AggregatorState flat(init, {});
    hier_round(tree, hier, ups);
    agg_weighted_avg(flat, ups);
    worst = std::max(worst, max_abs_diff(hier.global, flat.global));
  }
  return worst;
}

inline double worst_complete_dfl_vs_fedavg(std::mt19937_64& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = 2 + rng() % 8;
    const ParameterSet like = random_params(rng, DType::f64);
    std::vector<ParameterSet> models;
    std::vector<ModelUpdate> ups;
    for (std::size_t i = 0; i < n; ++i) {
      models.push_back(random_like(rng, like));
      ModelUpdate u;
      u.client_id = "n" + std::to_string(i);
      u.params = models.back();
      u.sample_count = 7;
      ups.push_back(u);
    }
    AggregatorState flat(like, {});
    agg_weighted_avg(flat, ups);
    for (const auto& m : dfl_round(NeighborGraph::complete(n), models).models)
      worst = std::max(worst, max_abs_diff(m, flat.global));
  }
  return worst;
}

}  // namespace apfl::testing
