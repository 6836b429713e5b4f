#pragma once

// Shared fixtures: tiny hand-built trees and tables with known answers, plus
// independent reference implementations used to cross-check the library
// (naive dense forward, naive nested-loop join counting, finite differences).

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fasco/fasco.hpp"

namespace helpers {

inline fasco::PlanNode leaf(int id, std::string op, std::string relation, double est = 1.0,
                            std::vector<fasco::Predicate> filters = {}) {
  fasco::PlanNode n;
  n.node_id = id;
  n.op = std::move(op);
  n.relation = std::move(relation);
  n.est_rows = est;
  n.calibrated_rows = est;
  n.filters = std::move(filters);
  return n;
}

inline fasco::PlanNode join(int id, std::string op, fasco::PlanNode left, fasco::PlanNode right,
                            std::optional<fasco::JoinKeys> keys = std::nullopt,
                            double est = 1.0) {
  fasco::PlanNode n;
  n.node_id = id;
  n.op = std::move(op);
  n.join_keys = keys;
  n.est_rows = est;
  n.calibrated_rows = est;
  n.children.push_back(std::move(left));
  n.children.push_back(std::move(right));
  return n;
}

inline fasco::PlanNode unary(int id, std::string op, fasco::PlanNode child, double est = 1.0) {
  fasco::PlanNode n;
  n.node_id = id;
  n.op = std::move(op);
  n.est_rows = est;
  n.calibrated_rows = est;
  n.children.push_back(std::move(child));
  return n;
}

inline void label_all(fasco::PlanNode& n, double time_ms, std::int64_t rows = 1) {
  n.actual_time_ms = time_ms;
  n.actual_rows = rows;
  for (auto& c : n.children) label_all(c, time_ms / 2, rows);
}

// two small tables with fully known contents:
//   ta: k = {1,1,2,3,5}, v = {10,20,30,40,50}
//   tb: k = {1,2,2,7},   w = {1,2,3,4}
// inner join on k: ta rows {0,1,2} x tb matches -> (0,0) (1,0) (2,1) (2,2), 4 rows
inline fasco::TableSet tiny_tables() {
  fasco::TableSet set;
  fasco::TableData ta;
  ta.name = "ta";
  ta.columns = {"k", "v"};
  ta.cells = {{1, 1, 2, 3, 5}, {10, 20, 30, 40, 50}};
  fasco::TableData tb;
  tb.name = "tb";
  tb.columns = {"k", "w"};
  tb.cells = {{1, 2, 2, 7}, {1, 2, 3, 4}};
  set["ta"] = std::move(ta);
  set["tb"] = std::move(tb);
  return set;
}

inline fasco::Catalog tiny_catalog() {
  auto tables = tiny_tables();
  fasco::Catalog c;
  for (const auto& [name, t] : tables) {
    c.tables[name] = static_cast<double>(t.rows());
    for (std::size_t i = 0; i < t.cells.size(); ++i)
      c.columns[t.column_id(i)] = fasco::build_histogram(t.cells[i], 4);
  }
  c.join_pairs.push_back({"ta", "tb", "ta.k", "tb.k"});
  return c;
}

// Independent row-by-row dense forward, no shared code with nn.hpp internals.
inline std::vector<double> naive_stack_forward(const fasco::DenseStack& s,
                                               std::vector<double> x) {
  for (const auto& l : s.layers) {
    std::vector<double> y(static_cast<std::size_t>(l.out));
    for (int o = 0; o < l.out; ++o) {
      double z = l.bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < l.in; ++i)
        z += l.weight[static_cast<std::size_t>(o * l.in + i)] * x[static_cast<std::size_t>(i)];
      switch (l.act) {
        case fasco::Activation::Identity: y[static_cast<std::size_t>(o)] = z; break;
        case fasco::Activation::Tanh: y[static_cast<std::size_t>(o)] = std::tanh(z); break;
        case fasco::Activation::Exp: y[static_cast<std::size_t>(o)] = std::exp(z); break;
      }
    }
    x = std::move(y);
  }
  return x;
}

// Independent join counter: full nested loop over the raw tables, applying
// the key equality plus predicates on either side.
inline double naive_join_count(const fasco::TableSet& tables, const std::string& table_a,
                               const std::string& key_a, const std::string& table_b,
                               const std::string& key_b,
                               const std::vector<fasco::Predicate>& preds) {
  const auto& ta = fasco::table_of(tables, table_a);
  const auto& tb = fasco::table_of(tables, table_b);
  auto col = [](const fasco::TableData& t, const std::string& full) {
    auto [tn, cn] = fasco::split_column(full);
    return t.column_index(cn);
  };
  int ca = col(ta, key_a);
  int cb = col(tb, key_b);
  double count = 0;
  for (std::size_t ra = 0; ra < ta.rows(); ++ra) {
    for (std::size_t rb = 0; rb < tb.rows(); ++rb) {
      if (std::llround(ta.cells[static_cast<std::size_t>(ca)][ra]) !=
          std::llround(tb.cells[static_cast<std::size_t>(cb)][rb]))
        continue;
      bool ok = true;
      for (const auto& p : preds) {
        auto [tn, cn] = fasco::split_column(p.column);
        const auto& t = tn == table_a ? ta : tb;
        std::size_t r = tn == table_a ? ra : rb;
        int ci = t.column_index(cn);
        if (!fasco::predicate_holds(t.cells[static_cast<std::size_t>(ci)][r], p.op, p.value)) {
          ok = false;
          break;
        }
      }
      if (ok) count += 1.0;
    }
  }
  return count;
}

// Independent recursive plan evaluator: materializes full row-index tuples
// with nested loops only. Mirrors the plan semantics without sharing any code
// with SubplanEvaluator.
struct NaiveRows {
  std::vector<std::string> tables;
  std::vector<std::vector<std::size_t>> rows;
};

inline bool naive_row_passes(const fasco::TableSet& tables, const NaiveRows& m,
                             const std::vector<std::size_t>& tuple,
                             const std::vector<fasco::Predicate>& preds) {
  for (const auto& p : preds) {
    auto [tn, cn] = fasco::split_column(p.column);
    int slot = -1;
    for (std::size_t i = 0; i < m.tables.size(); ++i)
      if (m.tables[i] == tn) slot = static_cast<int>(i);
    if (slot < 0) return false;
    const auto& t = fasco::table_of(tables, tn);
    int ci = t.column_index(cn);
    double cell = t.cells[static_cast<std::size_t>(ci)][tuple[static_cast<std::size_t>(slot)]];
    if (!fasco::predicate_holds(cell, p.op, p.value)) return false;
  }
  return true;
}

inline double key_cell(const fasco::TableSet& tables, const NaiveRows& m,
                       const std::vector<std::size_t>& tuple, const std::string& full) {
  auto [tn, cn] = fasco::split_column(full);
  for (std::size_t i = 0; i < m.tables.size(); ++i)
    if (m.tables[i] == tn) {
      const auto& t = fasco::table_of(tables, tn);
      return t.cells[static_cast<std::size_t>(t.column_index(cn))][tuple[i]];
    }
  throw std::runtime_error("key column not in tuple: " + full);
}

inline NaiveRows naive_eval(const fasco::TableSet& tables, const fasco::PlanNode& n) {
  if (n.is_leaf()) {
    NaiveRows m;
    m.tables = {*n.relation};
    const auto& t = fasco::table_of(tables, *n.relation);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      std::vector<std::size_t> tup = {r};
      if (naive_row_passes(tables, m, tup, n.filters)) m.rows.push_back(tup);
    }
    return m;
  }
  if (n.children.size() == 1) {
    NaiveRows child = naive_eval(tables, n.children[0]);
    NaiveRows out;
    out.tables = child.tables;
    for (const auto& tup : child.rows)
      if (naive_row_passes(tables, out, tup, n.filters)) out.rows.push_back(tup);
    return out;
  }
  NaiveRows left = naive_eval(tables, n.children[0]);
  const fasco::PlanNode& rc = n.children[1];
  NaiveRows combined;
  if (rc.is_leaf() && rc.is_subquery_of_sibling && !rc.join_keys) {
    combined.tables = left.tables;
    for (const auto& tup : left.rows)
      if (naive_row_passes(tables, combined, tup, rc.filters)) combined.rows.push_back(tup);
  } else {
    NaiveRows right;
    const fasco::JoinKeys* keys = nullptr;
    if (rc.is_leaf() && rc.is_subquery_of_sibling) {
      right.tables = {*rc.relation};
      const auto& t = fasco::table_of(tables, *rc.relation);
      for (std::size_t r = 0; r < t.rows(); ++r) {
        std::vector<std::size_t> tup = {r};
        if (naive_row_passes(tables, right, tup, rc.filters)) right.rows.push_back(tup);
      }
      keys = &*rc.join_keys;
    } else {
      right = naive_eval(tables, rc);
      keys = &*n.join_keys;
    }
    combined.tables = left.tables;
    combined.tables.insert(combined.tables.end(), right.tables.begin(), right.tables.end());
    // orient: first key that resolves in left
    std::string lk = (*keys)[0], rk = (*keys)[1];
    bool lk_in_left = false;
    auto [lt, lc] = fasco::split_column(lk);
    for (const auto& t : left.tables)
      if (t == lt) lk_in_left = true;
    if (!lk_in_left) std::swap(lk, rk);
    for (const auto& a : left.rows)
      for (const auto& b : right.rows) {
        if (std::llround(key_cell(tables, left, a, lk)) !=
            std::llround(key_cell(tables, right, b, rk)))
          continue;
        std::vector<std::size_t> tup = a;
        tup.insert(tup.end(), b.begin(), b.end());
        combined.rows.push_back(std::move(tup));
      }
  }
  NaiveRows out;
  out.tables = combined.tables;
  for (const auto& tup : combined.rows)
    if (naive_row_passes(tables, out, tup, n.filters)) out.rows.push_back(tup);
  return out;
}

inline double central_difference(const std::function<double()>& f, double* x, double h) {
  double saved = *x;
  *x = saved + h;
  double up = f();
  *x = saved - h;
  double down = f();
  *x = saved;
  return (up - down) / (2 * h);
}

// every trainable scalar of the model, in a stable order
inline std::vector<double*> all_parameters(fasco::ModelParams& p) {
  std::vector<double*> out;
  for (auto& v : p.op_embedding.table) out.push_back(&v);
  for (auto& v : p.joinkey_embedding.table) out.push_back(&v);
  for (fasco::DenseStack* s : {&p.backbone, &p.state_head, &p.cost_head})
    for (auto& l : s->layers) {
      for (auto& v : l.weight) out.push_back(&v);
      for (auto& v : l.bias) out.push_back(&v);
    }
  return out;
}

// analytic gradients in the same order as all_parameters
inline std::vector<double> flatten_grads(const fasco::ModelGrads& g) {
  std::vector<double> out;
  out.insert(out.end(), g.op_embedding.begin(), g.op_embedding.end());
  out.insert(out.end(), g.joinkey_embedding.begin(), g.joinkey_embedding.end());
  for (const fasco::StackGrads* s : {&g.backbone, &g.state_head, &g.cost_head})
    for (std::size_t i = 0; i < s->weight.size(); ++i) {
      out.insert(out.end(), s->weight[i].begin(), s->weight[i].end());
      out.insert(out.end(), s->bias[i].begin(), s->bias[i].end());
    }
  return out;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

}  // namespace helpers
