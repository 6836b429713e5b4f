#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fasco/catalog.hpp"
#include "fasco/plan.hpp"
#include "fasco/util.hpp"

namespace fasco {

// Ordered category list with an out-of-vocabulary slot; join-key vocabularies
// carry one more slot for "no join predicate at this node".
struct Vocabulary {
  std::vector<std::string> entries;  // unique, sorted
  bool has_no_join = false;

  int index_of(std::string_view s) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), s);
    if (it != entries.end() && *it == s) return static_cast<int>(it - entries.begin());
    return unknown_idx();
  }

  int unknown_idx() const { return static_cast<int>(entries.size()); }
  int no_join_idx() const { return static_cast<int>(entries.size()) + 1; }
  int size() const { return static_cast<int>(entries.size()) + 1 + (has_no_join ? 1 : 0); }

  bool operator==(const Vocabulary&) const = default;
};

inline Vocabulary make_vocabulary(const std::set<std::string>& items, bool with_no_join) {
  Vocabulary v;
  v.entries.assign(items.begin(), items.end());
  v.has_no_join = with_no_join;
  return v;
}

// canonical identity of a join-key pair: lexicographically sorted sides
inline std::string canonical_join_key(const JoinKeys& keys) {
  const std::string& a = keys[0] <= keys[1] ? keys[0] : keys[1];
  const std::string& b = keys[0] <= keys[1] ? keys[1] : keys[0];
  return a + "|" + b;
}

inline Vocabulary build_operator_vocab(std::span<const PlanTree> corpus) {
  std::set<std::string> ops;
  for (const auto& t : corpus)
    for (const PlanNode* n : post_order(t)) ops.insert(n->op);
  return make_vocabulary(ops, false);
}

inline Vocabulary build_joinkey_vocab(std::span<const PlanTree> corpus) {
  std::set<std::string> keys;
  for (const auto& t : corpus)
    for (const PlanNode* n : post_order(t))
      if (n->join_keys) keys.insert(canonical_join_key(*n->join_keys));
  return make_vocabulary(keys, true);
}

struct FeatureVector {
  int operator_idx = 0;
  int subquery_flag = 0;
  double card_left = 0.0;   // normalized
  double card_right = 0.0;  // normalized
  int filter_count = 0;
  int join_key_idx = 0;

  bool operator==(const FeatureVector&) const = default;
};

inline int encode_operator(std::string_view op, const Vocabulary& v) {
  return v.index_of(op);
}

inline int encode_join_keys(const PlanNode& n, const Vocabulary& v) {
  if (!n.join_keys) return v.no_join_idx();
  return v.index_of(canonical_join_key(*n.join_keys));
}

inline int subquery_flag(const PlanNode& n) { return n.is_subquery_of_sibling ? 1 : 0; }

inline int filter_count(const PlanNode& n) { return static_cast<int>(n.filters.size()); }

// log-scale row count mapped into [0, 1] against the largest catalog table
inline double normalize_rows(double rows, double max_rows) {
  double denom = std::log1p(std::max(1.0, max_rows));
  if (denom <= 0) return 0.0;
  double v = std::log1p(std::max(0.0, rows)) / denom;
  return std::clamp(v, 0.0, 1.0);
}

// Raw (row-space) cardinality inputs of a leaf. Three cases:
//   plain scan             -> (table rows, 1)
//   subquery, filters only -> (sibling output, 1)
//   subquery with join     -> (sibling output, own table rows)
inline std::pair<double, double> leaf_cardinalities(const PlanNode& leaf,
                                                    const PlanNode* sibling,
                                                    const Catalog& catalog) {
  const bool subquery = leaf.is_subquery_of_sibling && sibling != nullptr;
  if (!subquery) {
    if (!leaf.relation) throw catalog_error("leaf node " + std::to_string(leaf.node_id) +
                                            " has no relation");
    return {catalog.table_rows(*leaf.relation), 1.0};
  }
  if (!leaf.join_keys) return {sibling->calibrated_rows, 1.0};
  if (!leaf.relation) throw catalog_error("leaf node " + std::to_string(leaf.node_id) +
                                          " has no relation");
  return {sibling->calibrated_rows, catalog.table_rows(*leaf.relation)};
}

inline std::pair<double, double> internal_cardinalities(const PlanNode& n) {
  if (n.children.size() != 2)
    throw config_error("internal_cardinalities on a node without two children");
  return {n.children[0].calibrated_rows, n.children[1].calibrated_rows};
}

inline FeatureVector build_feature_vector(const PlanNode& n, const PlanNode* sibling,
                                          const Catalog& catalog, const Vocabulary& ops,
                                          const Vocabulary& join_keys, double normalizer) {
  FeatureVector fv;
  fv.operator_idx = encode_operator(n.op, ops);
  fv.subquery_flag = subquery_flag(n);
  auto [left, right] =
      n.is_leaf() ? leaf_cardinalities(n, sibling, catalog) : internal_cardinalities(n);
  fv.card_left = normalize_rows(left, normalizer);
  fv.card_right = normalize_rows(right, normalizer);
  fv.filter_count = filter_count(n);
  fv.join_key_idx = encode_join_keys(n, join_keys);
  return fv;
}

}  // namespace fasco
