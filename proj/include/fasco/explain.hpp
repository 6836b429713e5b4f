#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fasco/plan.hpp"
#include "fasco/util.hpp"

// Converts PostgreSQL `EXPLAIN (FORMAT JSON)` output into the native plan
// schema: node types kept verbatim (bitmap heap/index pairs collapsed),
// aliases rewritten to relation names, join conditions lifted into join keys,
// parameterized inner scans marked as subqueries of their sibling.

namespace fasco {

namespace detail {

inline std::string trim_ws(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// strips one or more balanced outer parenthesis pairs
inline std::string strip_outer_parens(std::string s) {
  for (;;) {
    s = trim_ws(s);
    if (s.size() < 2 || s.front() != '(' || s.back() != ')') return s;
    int depth = 0;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      if (s[i] == '(') ++depth;
      if (s[i] == ')') --depth;
      if (depth == 0) return s;  // outer parens close early: not a single pair
    }
    s = s.substr(1, s.size() - 2);
  }
}

inline std::vector<std::string> split_top_and(const std::string& text) {
  std::vector<std::string> out;
  int depth = 0;
  bool quoted = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char ch = text[i];
    if (quoted) {
      if (ch == '\'') quoted = false;
      continue;
    }
    if (ch == '\'') quoted = true;
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (depth == 0 && ch == 'A' && text.compare(i, 5, "AND (") == 0 && i > 0 &&
        std::isspace(static_cast<unsigned char>(text[i - 1]))) {
      out.push_back(text.substr(start, i - start));
      start = i + 4;
      i += 3;
    }
  }
  out.push_back(text.substr(start));
  for (auto& s : out) s = strip_outer_parens(s);
  return out;
}

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
  for (char ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_') return false;
  return true;
}

// "alias.column" with both parts plain identifiers
inline bool is_qualified_ref(std::string_view s) {
  auto dot = s.find('.');
  if (dot == std::string_view::npos) return false;
  return is_identifier(s.substr(0, dot)) && is_identifier(s.substr(dot + 1)) &&
         s.find('.', dot + 1) == std::string_view::npos;
}

// finds the top-level comparison; returns {pos, len, op}
inline std::optional<std::tuple<std::size_t, std::size_t, PredOp>> find_comparison(
    const std::string& s) {
  int depth = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char ch = s[i];
    if (quoted) {
      if (ch == '\'') quoted = false;
      continue;
    }
    if (ch == '\'') quoted = true;
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (depth != 0) continue;
    if (ch == '<' || ch == '>') {
      if (i + 1 < s.size() && s[i + 1] == '>') return std::nullopt;  // <> unsupported
      bool eq = i + 1 < s.size() && s[i + 1] == '=';
      PredOp op = ch == '<' ? (eq ? PredOp::LE : PredOp::LT) : (eq ? PredOp::GE : PredOp::GT);
      return std::make_tuple(i, eq ? 2u : 1u, op);
    }
    if (ch == '=') return std::make_tuple(i, std::size_t{1}, PredOp::EQ);
  }
  return std::nullopt;
}

// drops '::type' casts and surrounding quotes; numeric text becomes a double
inline PredValue parse_literal(std::string text) {
  text = trim_ws(text);
  if (auto cast = text.find("::"); cast != std::string::npos) text = trim_ws(text.substr(0, cast));
  text = strip_outer_parens(text);
  if (text.size() >= 2 && text.front() == '\'' && text.back() == '\'')
    text = text.substr(1, text.size() - 2);
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  return text;
}

struct Conjunct {
  enum Kind { ColumnLiteral, ColumnColumn, Opaque } kind = Opaque;
  Predicate pred;                    // ColumnLiteral / Opaque
  std::pair<std::string, std::string> refs;  // ColumnColumn, qualified, EQ only when used as keys
  PredOp op = PredOp::EQ;
};

inline Conjunct classify_conjunct(const std::string& raw) {
  Conjunct c;
  std::string text = strip_outer_parens(raw);
  auto cmp = find_comparison(text);
  if (!cmp) {
    c.kind = Conjunct::Opaque;
    c.pred = {text, PredOp::EQ, std::string("?")};
    return c;
  }
  auto [pos, len, op] = *cmp;
  std::string lhs = trim_ws(text.substr(0, pos));
  std::string rhs = trim_ws(text.substr(pos + len));
  lhs = strip_outer_parens(lhs);
  rhs = strip_outer_parens(rhs);
  if (is_qualified_ref(lhs) && is_qualified_ref(rhs)) {
    c.kind = Conjunct::ColumnColumn;
    c.refs = {lhs, rhs};
    c.op = op;
    return c;
  }
  if (is_qualified_ref(lhs) || is_identifier(lhs)) {
    PredValue v = parse_literal(rhs);
    c.kind = Conjunct::ColumnLiteral;
    c.pred = {lhs, op, std::move(v)};
    return c;
  }
  c.kind = Conjunct::Opaque;
  c.pred = {text, PredOp::EQ, std::string("?")};
  return c;
}

struct AliasMap {
  std::map<std::string, std::string> alias_to_relation;

  // rewrites the alias part of "a.c" to its relation; unknown aliases pass through
  std::string resolve(const std::string& ref) const {
    auto dot = ref.find('.');
    if (dot == std::string::npos) return ref;
    auto it = alias_to_relation.find(ref.substr(0, dot));
    if (it == alias_to_relation.end()) return ref;
    return it->second + ref.substr(dot);
  }

  void collect(const nlohmann::json& plan) {
    if (plan.contains("Relation Name") && plan["Relation Name"].is_string()) {
      std::string rel = plan["Relation Name"].get<std::string>();
      std::string alias = rel;
      if (plan.contains("Alias") && plan["Alias"].is_string())
        alias = plan["Alias"].get<std::string>();
      alias_to_relation[alias] = rel;
    }
    if (plan.contains("Plans"))
      for (const auto& child : plan["Plans"]) collect(child);
  }
};

inline const nlohmann::json& explain_root(const nlohmann::json& doc) {
  if (doc.is_array() && !doc.empty() && doc[0].is_object() && doc[0].contains("Plan"))
    return doc[0]["Plan"];
  if (doc.is_object() && doc.contains("Plan")) return doc["Plan"];
  if (doc.is_object() && doc.contains("Node Type")) return doc;
  throw parse_error("unrecognized EXPLAIN document shape");
}

inline bool is_bitmap_internal(const nlohmann::json& plan) {
  if (!plan.contains("Node Type") || !plan["Node Type"].is_string()) return false;
  std::string t = plan["Node Type"].get<std::string>();
  return t == "Bitmap Index Scan" || t == "BitmapAnd" || t == "BitmapOr";
}

// collects Index Conds of a bitmap index subtree into the heap scan's filters
inline void hoist_bitmap_conditions(const nlohmann::json& plan, std::vector<std::string>& out) {
  if (plan.contains("Index Cond") && plan["Index Cond"].is_string())
    out.push_back(plan["Index Cond"].get<std::string>());
  if (plan.contains("Plans"))
    for (const auto& child : plan["Plans"]) hoist_bitmap_conditions(child, out);
}

class ExplainConverter {
 public:
  explicit ExplainConverter(const nlohmann::json& root) { aliases_.collect(root); }

  PlanNode convert(const nlohmann::json& plan) {
    if (!plan.is_object() || !plan.contains("Node Type") || !plan["Node Type"].is_string())
      throw parse_error("EXPLAIN node without a Node Type");
    PlanNode n;
    n.op = plan["Node Type"].get<std::string>();
    if (n.op == "Bitmap Heap Scan") n.op = "Bitmap Scan";

    if (plan.contains("Relation Name") && plan["Relation Name"].is_string())
      n.relation = plan["Relation Name"].get<std::string>();

    double est = 1.0;
    if (plan.contains("Plan Rows") && plan["Plan Rows"].is_number())
      est = plan["Plan Rows"].get<double>();
    n.est_rows = std::max(1.0, est);
    n.calibrated_rows = n.est_rows;

    double loops = 1.0;
    if (plan.contains("Actual Loops") && plan["Actual Loops"].is_number())
      loops = std::max(1.0, plan["Actual Loops"].get<double>());
    if (plan.contains("Actual Rows") && plan["Actual Rows"].is_number())
      n.actual_rows =
          static_cast<std::int64_t>(std::llround(plan["Actual Rows"].get<double>() * loops));
    if (plan.contains("Actual Total Time") && plan["Actual Total Time"].is_number())
      n.actual_time_ms = plan["Actual Total Time"].get<double>() * loops;

    std::vector<std::string> conditions;
    for (const char* key : {"Hash Cond", "Merge Cond", "Join Filter", "Index Cond",
                            "Recheck Cond", "Filter"})
      if (plan.contains(key) && plan[key].is_string())
        conditions.push_back(plan[key].get<std::string>());

    if (plan.contains("Plans")) {
      for (const auto& child : plan["Plans"]) {
        if (is_bitmap_internal(child)) {
          hoist_bitmap_conditions(child, conditions);
          continue;
        }
        n.children.push_back(convert(child));
      }
    }
    if (n.children.size() > 2)
      throw parse_error("unsupported EXPLAIN shape: node '" + n.op + "' has " +
                        std::to_string(n.children.size()) + " children");

    apply_conditions(n, conditions);
    return n;
  }

 private:
  void apply_conditions(PlanNode& n, const std::vector<std::string>& conditions) {
    bool correlated = false;
    // Recheck Cond repeats Index Cond verbatim, so exact duplicates are dropped.
    auto push_unique = [&n](Predicate p) {
      if (std::find(n.filters.begin(), n.filters.end(), p) == n.filters.end())
        n.filters.push_back(std::move(p));
    };
    for (const auto& text : conditions) {
      if (text.find('$') != std::string::npos) correlated = true;
      for (const auto& raw : split_top_and(strip_outer_parens(text))) {
        Conjunct c = classify_conjunct(raw);
        if (c.kind == Conjunct::ColumnColumn) {
          std::string a = aliases_.resolve(c.refs.first);
          std::string b = aliases_.resolve(c.refs.second);
          auto table = [](const std::string& ref) { return ref.substr(0, ref.find('.')); };
          bool cross = table(a) != table(b);
          if (c.op == PredOp::EQ && cross && !n.join_keys) {
            n.join_keys = JoinKeys{a, b};
            // cross-table equality on a single-relation leaf references the outer side
            if (n.is_leaf()) correlated = true;
            continue;
          }
          push_unique({strip_outer_parens(raw), PredOp::EQ, std::string("?")});
          continue;
        }
        if (c.kind == Conjunct::ColumnLiteral) {
          c.pred.column = aliases_.resolve(c.pred.column);
          push_unique(std::move(c.pred));
          continue;
        }
        push_unique(std::move(c.pred));
      }
    }
    // A leaf holding a condition on another relation runs once per outer row.
    if (n.is_leaf() && correlated) n.is_subquery_of_sibling = true;
  }

  AliasMap aliases_;
};

inline void assign_explain_ids(PlanNode& n, int& next) {
  n.node_id = next++;
  for (auto& c : n.children) assign_explain_ids(c, next);
}

}  // namespace detail

inline PlanTree from_explain_json(const nlohmann::json& doc) {
  const nlohmann::json& root = detail::explain_root(doc);
  detail::ExplainConverter conv(root);
  PlanTree t;
  t.source = PlanSource::Adapter;
  t.root = conv.convert(root);
  int next = 0;
  detail::assign_explain_ids(t.root, next);
  return t;
}

inline PlanTree from_explain_text(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("EXPLAIN JSON: ") + e.what());
  }
  return from_explain_json(doc);
}

}  // namespace fasco
