#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fasco/util.hpp"

namespace fasco {

enum class PredOp { EQ, LT, GT, LE, GE };

inline std::string_view to_string(PredOp op) {
  switch (op) {
    case PredOp::EQ: return "EQ";
    case PredOp::LT: return "LT";
    case PredOp::GT: return "GT";
    case PredOp::LE: return "LE";
    case PredOp::GE: return "GE";
  }
  return "EQ";
}

inline std::optional<PredOp> pred_op_from(std::string_view s) {
  if (s == "EQ") return PredOp::EQ;
  if (s == "LT") return PredOp::LT;
  if (s == "GT") return PredOp::GT;
  if (s == "LE") return PredOp::LE;
  if (s == "GE") return PredOp::GE;
  return std::nullopt;
}

using PredValue = std::variant<double, std::string>;

struct Predicate {
  std::string column;  // "table.column"
  PredOp op = PredOp::EQ;
  PredValue value = 0.0;

  bool operator==(const Predicate&) const = default;
};

// ordered pair of "table.column" names; order as written in the plan
using JoinKeys = std::array<std::string, 2>;

struct PlanNode {
  int node_id = 0;
  std::string op;  // physical operator name, e.g. "Hash Join"
  std::optional<std::string> relation;
  std::vector<Predicate> filters;
  std::optional<JoinKeys> join_keys;
  bool is_subquery_of_sibling = false;
  double est_rows = 1.0;
  double calibrated_rows = 1.0;  // starts equal to est_rows, only calibration moves it
  std::optional<std::int64_t> actual_rows;
  std::optional<double> actual_time_ms;  // inclusive of the whole subtree
  std::vector<PlanNode> children;        // 0 or 2 after canonicalization

  bool is_leaf() const { return children.empty(); }
  bool operator==(const PlanNode&) const = default;
};

enum class PlanSource { Canonical, Adapter, Synthetic };

inline std::string_view to_string(PlanSource s) {
  switch (s) {
    case PlanSource::Canonical: return "CANONICAL";
    case PlanSource::Adapter: return "ADAPTER";
    case PlanSource::Synthetic: return "SYNTHETIC";
  }
  return "CANONICAL";
}

struct PlanTree {
  PlanNode root;
  PlanSource source = PlanSource::Canonical;

  bool operator==(const PlanTree&) const = default;
};

// ---------------------------------------------------------------------------
// parsing

namespace detail {

inline std::string child_path(const std::string& base, const char* field) {
  return base + "." + field;
}

inline std::string elem_path(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

inline double require_number(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw parse_error(path + ": expected a number");
  double v = j.get<double>();
  if (std::isnan(v) || std::isinf(v)) throw parse_error(path + ": non-finite number");
  return v;
}

inline Predicate parse_predicate(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw parse_error(path + ": expected a filter object");
  Predicate p;
  auto col = j.find("column");
  if (col == j.end() || !col->is_string() || col->get<std::string>().empty())
    throw parse_error(child_path(path, "column") + ": expected a non-empty string");
  p.column = col->get<std::string>();
  auto op = j.find("op");
  if (op == j.end() || !op->is_string())
    throw parse_error(child_path(path, "op") + ": expected a string");
  auto parsed = pred_op_from(op->get<std::string>());
  if (!parsed)
    throw parse_error(child_path(path, "op") + ": unknown comparison '" +
                      op->get<std::string>() + "' (one of EQ, LT, GT, LE, GE)");
  p.op = *parsed;
  auto val = j.find("value");
  if (val == j.end()) throw parse_error(child_path(path, "value") + ": missing");
  if (val->is_number()) {
    p.value = require_number(*val, child_path(path, "value"));
  } else if (val->is_string()) {
    p.value = val->get<std::string>();
  } else {
    throw parse_error(child_path(path, "value") + ": expected a number or string");
  }
  return p;
}

inline PlanNode parse_node(const nlohmann::json& j, const std::string& path, int& next_id) {
  if (!j.is_object()) throw parse_error(path + ": expected a plan node object");
  PlanNode n;
  n.node_id = next_id++;

  auto nt = j.find("node_type");
  if (nt == j.end() || !nt->is_string() || nt->get<std::string>().empty())
    throw parse_error(child_path(path, "node_type") + ": expected a non-empty string");
  n.op = nt->get<std::string>();

  if (auto it = j.find("relation"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw parse_error(child_path(path, "relation") + ": expected a string");
    n.relation = it->get<std::string>();
  }

  if (auto it = j.find("filters"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw parse_error(child_path(path, "filters") + ": expected an array");
    const auto fpath = child_path(path, "filters");
    for (std::size_t i = 0; i < it->size(); ++i)
      n.filters.push_back(parse_predicate((*it)[i], elem_path(fpath, i)));
  }

  if (auto it = j.find("join_keys"); it != j.end() && !it->is_null()) {
    const auto kpath = child_path(path, "join_keys");
    if (!it->is_array() || it->size() != 2)
      throw parse_error(kpath + ": expected an array of exactly 2 strings");
    JoinKeys keys;
    for (std::size_t i = 0; i < 2; ++i) {
      if (!(*it)[i].is_string() || (*it)[i].get<std::string>().empty())
        throw parse_error(elem_path(kpath, i) + ": expected a non-empty string");
      keys[i] = (*it)[i].get<std::string>();
    }
    n.join_keys = keys;
  }

  if (auto it = j.find("is_subquery_of_sibling"); it != j.end() && !it->is_null()) {
    if (!it->is_boolean())
      throw parse_error(child_path(path, "is_subquery_of_sibling") + ": expected a boolean");
    n.is_subquery_of_sibling = it->get<bool>();
  }

  auto est = j.find("est_rows");
  if (est == j.end()) throw parse_error(child_path(path, "est_rows") + ": missing");
  // row counts are floored at 1 so ratios and logs stay defined
  n.est_rows = std::max(1.0, require_number(*est, child_path(path, "est_rows")));
  n.calibrated_rows = n.est_rows;

  if (auto it = j.find("actual_rows"); it != j.end() && !it->is_null()) {
    double v = require_number(*it, child_path(path, "actual_rows"));
    if (v < 0) throw parse_error(child_path(path, "actual_rows") + ": must be nonnegative");
    n.actual_rows = static_cast<std::int64_t>(std::llround(v));
  }

  if (auto it = j.find("actual_time_ms"); it != j.end() && !it->is_null()) {
    double v = require_number(*it, child_path(path, "actual_time_ms"));
    if (v < 0) throw parse_error(child_path(path, "actual_time_ms") + ": must be nonnegative");
    n.actual_time_ms = v;
  }

  if (auto it = j.find("children"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw parse_error(child_path(path, "children") + ": expected an array");
    const auto cpath = child_path(path, "children");
    // any arity is accepted here; validate() enforces the binary shape
    for (std::size_t i = 0; i < it->size(); ++i)
      n.children.push_back(parse_node((*it)[i], elem_path(cpath, i), next_id));
  }

  return n;
}

}  // namespace detail

inline PlanTree parse_plan(const nlohmann::json& doc) {
  PlanTree t;
  int next_id = 0;
  t.root = detail::parse_node(doc, "$", next_id);
  if (doc.is_object()) {
    if (auto it = doc.find("source"); it != doc.end() && it->is_string()) {
      const std::string s = it->get<std::string>();
      if (s == "CANONICAL")
        t.source = PlanSource::Canonical;
      else if (s == "ADAPTER")
        t.source = PlanSource::Adapter;
      else if (s == "SYNTHETIC")
        t.source = PlanSource::Synthetic;
      else
        throw parse_error("$.source: unknown source '" + s + "'");
    }
  }
  return t;
}

inline PlanTree parse_plan(std::string_view text) {
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw parse_error("$: document is not valid JSON");
  return parse_plan(doc);
}

// exact matches for literals and std::string, which otherwise convert ambiguously
inline PlanTree parse_plan(const char* text) { return parse_plan(std::string_view(text)); }
inline PlanTree parse_plan(const std::string& text) {
  return parse_plan(std::string_view(text));
}

inline nlohmann::json serialize_node(const PlanNode& n) {
  nlohmann::json j;
  j["node_type"] = n.op;
  if (n.relation) j["relation"] = *n.relation;
  nlohmann::json filters = nlohmann::json::array();
  for (const auto& f : n.filters) {
    nlohmann::json fj;
    fj["column"] = f.column;
    fj["op"] = std::string(to_string(f.op));
    if (std::holds_alternative<double>(f.value))
      fj["value"] = std::get<double>(f.value);
    else
      fj["value"] = std::get<std::string>(f.value);
    filters.push_back(std::move(fj));
  }
  j["filters"] = std::move(filters);
  if (n.join_keys) j["join_keys"] = {(*n.join_keys)[0], (*n.join_keys)[1]};
  j["is_subquery_of_sibling"] = n.is_subquery_of_sibling;
  j["est_rows"] = n.est_rows;
  if (n.actual_rows) j["actual_rows"] = *n.actual_rows;
  if (n.actual_time_ms) j["actual_time_ms"] = *n.actual_time_ms;
  nlohmann::json children = nlohmann::json::array();
  for (const auto& c : n.children) children.push_back(serialize_node(c));
  j["children"] = std::move(children);
  return j;
}

inline nlohmann::json serialize_plan(const PlanTree& t) {
  nlohmann::json j = serialize_node(t.root);
  j["source"] = std::string(to_string(t.source));
  return j;
}

// ---------------------------------------------------------------------------
// canonicalization

namespace detail {

inline PlanNode merge_unary_node(PlanNode n) {
  for (auto& c : n.children) c = merge_unary_node(std::move(c));
  if (n.children.size() != 1) return n;
  // collapse into the (already merged) child: operator and shape come from
  // below, output rows and inclusive time from the topmost node of the chain
  PlanNode merged = std::move(n.children.front());
  merged.filters.insert(merged.filters.end(), n.filters.begin(), n.filters.end());
  if (!merged.join_keys && n.join_keys) merged.join_keys = n.join_keys;
  merged.est_rows = n.est_rows;
  merged.calibrated_rows = n.calibrated_rows;
  merged.actual_rows = n.actual_rows;
  merged.actual_time_ms = n.actual_time_ms;
  merged.is_subquery_of_sibling = n.is_subquery_of_sibling;
  return merged;
}

}  // namespace detail

inline PlanTree merge_unary(PlanTree t) {
  t.root = detail::merge_unary_node(std::move(t.root));
  return t;
}

// ---------------------------------------------------------------------------
// validation

namespace detail {

inline void validate_node(const PlanNode& n, bool labels_required,
                          std::set<int>& seen_ids, std::vector<std::string>& out) {
  const std::string where = "node " + std::to_string(n.node_id);
  if (!seen_ids.insert(n.node_id).second)
    out.push_back(where + ": duplicate node_id");
  if (n.children.size() != 0 && n.children.size() != 2)
    out.push_back(where + ": has " + std::to_string(n.children.size()) +
                  " children (must be 0 or 2)");
  if (n.op.empty()) out.push_back(where + ": empty operator name");
  if (!(n.est_rows >= 1.0) || std::isnan(n.est_rows) || std::isinf(n.est_rows))
    out.push_back(where + ": est_rows must be a finite value >= 1");
  if (!(n.calibrated_rows >= 1.0) || std::isnan(n.calibrated_rows) ||
      std::isinf(n.calibrated_rows))
    out.push_back(where + ": calibrated_rows must be a finite value >= 1");
  if (n.is_leaf() && !n.relation)
    out.push_back(where + ": leaf without a relation");
  if (!n.is_leaf() && n.relation)
    out.push_back(where + ": internal node carries a relation");
  if (n.actual_rows && *n.actual_rows < 0)
    out.push_back(where + ": negative actual_rows");
  if (n.actual_time_ms && (*n.actual_time_ms < 0 || std::isnan(*n.actual_time_ms)))
    out.push_back(where + ": invalid actual_time_ms");
  if (n.join_keys && ((*n.join_keys)[0].empty() || (*n.join_keys)[1].empty()))
    out.push_back(where + ": empty join key name");
  if (labels_required && !n.actual_time_ms)
    out.push_back(where + ": missing actual_time_ms while the root is labeled");
  for (const auto& c : n.children) validate_node(c, labels_required, seen_ids, out);
}

}  // namespace detail

// Returns the list of invariant violations; empty means the tree is valid.
inline std::vector<std::string> validate(const PlanTree& t) {
  std::vector<std::string> out;
  std::set<int> ids;
  const bool labeled = t.root.actual_time_ms.has_value();
  detail::validate_node(t.root, labeled, ids, out);
  return out;
}

// ---------------------------------------------------------------------------
// traversal

namespace detail {

template <class Node>
inline void post_order_collect(Node& n, std::vector<Node*>& out) {
  for (auto& c : n.children) post_order_collect(c, out);
  out.push_back(&n);
}

}  // namespace detail

inline std::vector<const PlanNode*> post_order(const PlanTree& t) {
  std::vector<const PlanNode*> out;
  detail::post_order_collect<const PlanNode>(t.root, out);
  return out;
}

inline std::vector<PlanNode*> post_order(PlanTree& t) {
  std::vector<PlanNode*> out;
  detail::post_order_collect<PlanNode>(t.root, out);
  return out;
}

inline std::size_t node_count(const PlanTree& t) { return post_order(t).size(); }

// parent / sibling lookup by node_id (ids must be unique)
struct TreeIndex {
  std::map<int, const PlanNode*> by_id;
  std::map<int, int> parent;
  std::map<int, int> sibling;

  static TreeIndex build(const PlanTree& t) {
    TreeIndex idx;
    build_rec(t.root, idx);
    return idx;
  }

 private:
  static void build_rec(const PlanNode& n, TreeIndex& idx) {
    idx.by_id[n.node_id] = &n;
    if (n.children.size() == 2) {
      idx.parent[n.children[0].node_id] = n.node_id;
      idx.parent[n.children[1].node_id] = n.node_id;
      idx.sibling[n.children[0].node_id] = n.children[1].node_id;
      idx.sibling[n.children[1].node_id] = n.children[0].node_id;
    } else {
      for (const auto& c : n.children) idx.parent[c.node_id] = n.node_id;
    }
    for (const auto& c : n.children) build_rec(c, idx);
  }
};

}  // namespace fasco
