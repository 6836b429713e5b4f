#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fasco/catalog.hpp"
#include "fasco/plan.hpp"
#include "fasco/util.hpp"

namespace fasco {

struct SynthSpec {
  int n_tables = 6;
  int rows_min = 1000;
  int rows_max = 50000;
  int cols_min = 2;
  int cols_max = 5;
  double rho = 0.5;  // join-key skew: 0 = uniform keys, 1 = strongly skewed
  std::uint64_t seed = 42;
  int histogram_buckets = 20;
  int key_domain = 2048;
  int extra_join_edges = 2;
};

inline void check_spec(const SynthSpec& s) {
  if (s.n_tables < 1) throw config_error("n_tables must be >= 1");
  if (s.rows_min < 1 || s.rows_max < s.rows_min) throw config_error("bad row count range");
  if (s.cols_min < 2 || s.cols_max < s.cols_min) throw config_error("bad column count range");
  if (s.rho < 0.0 || s.rho > 1.0) throw config_error("rho must be in [0, 1]");
  if (s.key_domain < 1) throw config_error("key_domain must be >= 1");
  if (s.histogram_buckets < 1) throw config_error("histogram_buckets must be >= 1");
}

// Zipf-like weights 1/(v+1)^s; all tables draw join keys from this one
// distribution, which is what makes independence-style join estimates fail.
class ZipfSampler {
 public:
  ZipfSampler(int domain, double s) {
    cdf_.resize(static_cast<std::size_t>(domain));
    double acc = 0;
    for (int v = 0; v < domain; ++v) {
      acc += 1.0 / std::pow(static_cast<double>(v + 1), s);
      cdf_[static_cast<std::size_t>(v)] = acc;
    }
    for (auto& c : cdf_) c /= acc;
  }

  int sample(Rng& rng) const {
    double u = rng.real();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) return static_cast<int>(cdf_.size()) - 1;
    return static_cast<int>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

// Deterministic catalog + data. Column 0 of every table is the join key "k";
// "c1"/"c2" are intra-table correlated so conjunctive filters also violate
// the independence assumption.
inline std::pair<Catalog, TableSet> gen_catalog(const SynthSpec& spec) {
  check_spec(spec);
  Rng rng(spec.seed);
  ZipfSampler zipf(spec.key_domain, 1.25 * spec.rho);
  Catalog catalog;
  TableSet tables;
  for (int ti = 0; ti < spec.n_tables; ++ti) {
    TableData t;
    t.name = "t" + std::to_string(ti + 1);
    int nrows = rng.int_range(spec.rows_min, spec.rows_max);
    int ncols = rng.int_range(spec.cols_min, spec.cols_max);
    t.columns.push_back("k");
    for (int c = 1; c < ncols; ++c) t.columns.push_back("c" + std::to_string(c));
    t.cells.assign(static_cast<std::size_t>(ncols), {});
    for (auto& col : t.cells) col.reserve(static_cast<std::size_t>(nrows));
    for (int r = 0; r < nrows; ++r) {
      t.cells[0].push_back(static_cast<double>(zipf.sample(rng)));
      for (int c = 1; c < ncols; ++c) {
        double v = 0;
        switch (c) {
          case 1: v = static_cast<double>(rng.below(1000)); break;
          case 2: v = t.cells[1].back() + static_cast<double>(rng.below(200)); break;
          case 3: v = static_cast<double>(rng.below(50)); break;
          default: v = static_cast<double>(rng.below(100000)); break;
        }
        t.cells[static_cast<std::size_t>(c)].push_back(v);
      }
    }
    catalog.tables[t.name] = static_cast<double>(nrows);
    for (std::size_t c = 0; c < t.cells.size(); ++c)
      catalog.columns[t.column_id(c)] =
          build_histogram(t.cells[c], spec.histogram_buckets);
    tables[t.name] = std::move(t);
  }

  // spanning tree over the key columns, plus a few extra edges
  std::set<std::pair<int, int>> edges;
  for (int i = 1; i < spec.n_tables; ++i) {
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
    edges.insert({j, i});
  }
  for (int e = 0; e < spec.extra_join_edges && spec.n_tables >= 2; ++e) {
    int a = rng.int_range(0, spec.n_tables - 1);
    int b = rng.int_range(0, spec.n_tables - 1);
    if (a == b) continue;
    edges.insert({std::min(a, b), std::max(a, b)});
  }
  for (auto [a, b] : edges) {
    JoinPairDecl d;
    d.table_a = "t" + std::to_string(a + 1);
    d.table_b = "t" + std::to_string(b + 1);
    d.key_a = d.table_a + ".k";
    d.key_b = d.table_b + ".k";
    catalog.join_pairs.push_back(std::move(d));
  }
  return {std::move(catalog), std::move(tables)};
}

// Recomputes row counts and histograms against the current data; the declared
// join pairs are structural and survive unchanged.
inline Catalog reanalyze(const TableSet& tables, const Catalog& old, int buckets = 20) {
  Catalog c;
  c.join_pairs = old.join_pairs;
  for (const auto& [name, t] : tables) {
    c.tables[name] = static_cast<double>(t.rows());
    for (std::size_t i = 0; i < t.cells.size(); ++i)
      c.columns[t.column_id(i)] = build_histogram(t.cells[i], buckets);
  }
  return c;
}

// Uniformly deletes round(frac * rows) tuples from each table, seeded.
inline TableSet delete_rows(const TableSet& tables, double frac, std::uint64_t seed) {
  if (frac < 0.0 || frac >= 1.0) throw config_error("deletion fraction must be in [0, 1)");
  Rng rng(seed);
  TableSet out;
  for (const auto& [name, t] : tables) {
    std::size_t n = t.rows();
    std::vector<std::uint32_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
    rng.shuffle(idx);
    std::size_t keep = n - static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    TableData nt;
    nt.name = t.name;
    nt.columns = t.columns;
    nt.cells.assign(t.cells.size(), {});
    for (std::size_t c = 0; c < t.cells.size(); ++c) {
      nt.cells[c].reserve(keep);
      for (std::uint32_t r : idx) nt.cells[c].push_back(t.cells[c][r]);
    }
    out[name] = std::move(nt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// exact evaluation

// Intermediate result: per output tuple, one source-row index per table slot.
struct Materialized {
  std::vector<std::string> tables;
  std::vector<std::int32_t> tuples;  // row-major, rows x tables.size()

  std::size_t width() const { return tables.size(); }
  std::size_t rows() const { return tables.empty() ? 0 : tuples.size() / tables.size(); }

  int slot_of(std::string_view table) const {
    for (std::size_t i = 0; i < tables.size(); ++i)
      if (tables[i] == table) return static_cast<int>(i);
    return -1;
  }
};

struct cardinality_cap_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct BoundPred {
  int slot;
  int col;
  PredOp op;
  PredValue value;
};

inline std::vector<BoundPred> bind_predicates(const Materialized& m, const TableSet& tables,
                                              std::span<const Predicate> preds) {
  std::vector<BoundPred> out;
  out.reserve(preds.size());
  for (const auto& p : preds) {
    auto [tname, cname] = split_column(p.column);
    int slot = m.slot_of(tname);
    if (slot < 0)
      throw config_error("predicate column '" + p.column + "' is not available at this node");
    int col = table_of(tables, tname).column_index(cname);
    if (col < 0) throw config_error("unknown column '" + p.column + "'");
    out.push_back({slot, col, p.op, p.value});
  }
  return out;
}

inline bool tuple_passes(const Materialized& m, const TableSet& tables,
                         std::span<const BoundPred> preds, std::size_t row) {
  const std::int32_t* tup = m.tuples.data() + row * m.width();
  for (const auto& p : preds) {
    const TableData& t = tables.at(m.tables[static_cast<std::size_t>(p.slot)]);
    double cell = t.cells[static_cast<std::size_t>(p.col)]
                         [static_cast<std::size_t>(tup[p.slot])];
    if (!predicate_holds(cell, p.op, p.value)) return false;
  }
  return true;
}

inline Materialized filter_materialized(Materialized m, const TableSet& tables,
                                        std::span<const Predicate> preds) {
  if (preds.empty()) return m;
  auto bound = bind_predicates(m, tables, preds);
  Materialized out;
  out.tables = m.tables;
  const std::size_t w = m.width();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!tuple_passes(m, tables, bound, r)) continue;
    const std::int32_t* tup = m.tuples.data() + r * w;
    out.tuples.insert(out.tuples.end(), tup, tup + w);
  }
  return out;
}

inline Materialized scan_table(const TableSet& tables, const std::string& relation,
                               std::span<const Predicate> preds) {
  const TableData& t = table_of(tables, relation);
  Materialized m;
  m.tables = {relation};
  std::vector<std::pair<int, const Predicate*>> bound;
  for (const auto& p : preds) {
    auto [tname, cname] = split_column(p.column);
    if (tname != relation)
      throw config_error("leaf predicate column '" + p.column + "' is not on relation '" +
                         relation + "'");
    int col = t.column_index(cname);
    if (col < 0) throw config_error("unknown column '" + p.column + "'");
    bound.emplace_back(col, &p);
  }
  for (std::size_t r = 0; r < t.rows(); ++r) {
    bool ok = true;
    for (const auto& [col, p] : bound)
      if (!predicate_holds(t.cells[static_cast<std::size_t>(col)][r], p->op, p->value)) {
        ok = false;
        break;
      }
    if (ok) m.tuples.push_back(static_cast<std::int32_t>(r));
  }
  return m;
}

inline long long key_of(double v) { return static_cast<long long>(std::llround(v)); }

inline Materialized hash_join(const Materialized& left, const Materialized& right,
                              const TableSet& tables, const std::string& left_key,
                              const std::string& right_key, std::size_t row_cap) {
  auto [lt, lc] = split_column(left_key);
  auto [rt, rc] = split_column(right_key);
  int lslot = left.slot_of(lt);
  int rslot = right.slot_of(rt);
  if (lslot < 0 || rslot < 0)
    throw config_error("join key '" + left_key + "' / '" + right_key +
                       "' does not match the join inputs");
  const TableData& ltab = table_of(tables, lt);
  const TableData& rtab = table_of(tables, rt);
  int lcol = ltab.column_index(lc);
  int rcol = rtab.column_index(rc);
  if (lcol < 0 || rcol < 0) throw config_error("unknown join key column");

  std::map<long long, std::vector<std::uint32_t>> index;
  const std::size_t rw = right.width();
  for (std::size_t r = 0; r < right.rows(); ++r) {
    std::int32_t src = right.tuples[r * rw + static_cast<std::size_t>(rslot)];
    double v = rtab.cells[static_cast<std::size_t>(rcol)][static_cast<std::size_t>(src)];
    index[key_of(v)].push_back(static_cast<std::uint32_t>(r));
  }

  Materialized out;
  out.tables = left.tables;
  out.tables.insert(out.tables.end(), right.tables.begin(), right.tables.end());
  const std::size_t lw = left.width();
  const std::size_t ow = out.tables.size();
  for (std::size_t r = 0; r < left.rows(); ++r) {
    std::int32_t src = left.tuples[r * lw + static_cast<std::size_t>(lslot)];
    double v = ltab.cells[static_cast<std::size_t>(lcol)][static_cast<std::size_t>(src)];
    auto it = index.find(key_of(v));
    if (it == index.end()) continue;
    for (std::uint32_t rr : it->second) {
      if (out.tuples.size() / ow >= row_cap)
        throw cardinality_cap_error("intermediate result exceeds the row cap");
      out.tuples.insert(out.tuples.end(), left.tuples.begin() + static_cast<std::ptrdiff_t>(r * lw),
                        left.tuples.begin() + static_cast<std::ptrdiff_t>(r * lw + lw));
      out.tuples.insert(out.tuples.end(),
                        right.tuples.begin() + static_cast<std::ptrdiff_t>(rr * rw),
                        right.tuples.begin() + static_cast<std::ptrdiff_t>(rr * rw + rw));
    }
  }
  return out;
}

// orients a key pair so .first sits in `m`
inline std::pair<std::string, std::string> orient_keys(const Materialized& m,
                                                       const JoinKeys& keys) {
  auto [t0, c0] = split_column(keys[0]);
  if (m.slot_of(t0) >= 0) return {keys[0], keys[1]};
  return {keys[1], keys[0]};
}

}  // namespace detail

// Brute-force evaluator for synthetic plans; the structure mirrors the plan
// semantics (plain joins, subquery joins, subquery filters, unary pass-through).
class SubplanEvaluator {
 public:
  explicit SubplanEvaluator(const TableSet& tables, std::size_t row_cap = 1u << 31)
      : tables_(tables), row_cap_(row_cap) {}

  Materialized eval(const PlanNode& n) const {
    if (n.is_leaf()) return detail::scan_table(tables_, require_relation(n), n.filters);
    if (n.children.size() == 1) {
      Materialized child = eval(n.children[0]);
      return detail::filter_materialized(std::move(child), tables_, n.filters);
    }
    if (n.children.size() != 2) throw config_error("plan node with more than two children");
    Materialized left = eval(n.children[0]);
    const PlanNode& rc = n.children[1];
    Materialized combined;
    if (rc.is_leaf() && rc.is_subquery_of_sibling) {
      if (rc.join_keys) {
        Materialized base = detail::scan_table(tables_, require_relation(rc), rc.filters);
        auto [lk, rk] = detail::orient_keys(left, *rc.join_keys);
        combined = detail::hash_join(left, base, tables_, lk, rk, row_cap_);
      } else {
        combined = detail::filter_materialized(std::move(left), tables_, rc.filters);
      }
    } else {
      Materialized right = eval(rc);
      if (!n.join_keys)
        throw config_error("merge node " + std::to_string(n.node_id) +
                           " has no join keys on any side");
      auto [lk, rk] = detail::orient_keys(left, *n.join_keys);
      combined = detail::hash_join(left, right, tables_, lk, rk, row_cap_);
    }
    return detail::filter_materialized(std::move(combined), tables_, n.filters);
  }

 private:
  static const std::string& require_relation(const PlanNode& n) {
    if (!n.relation) throw config_error("leaf node without a relation");
    return *n.relation;
  }

  const TableSet& tables_;
  std::size_t row_cap_;
};

inline double exact_cardinality(const TableSet& tables, const PlanNode& n) {
  return static_cast<double>(SubplanEvaluator(tables).eval(n).rows());
}

// ---------------------------------------------------------------------------
// vanilla estimates (histograms + independence)

namespace detail {

inline double filters_selectivity(const Catalog& c, std::span<const Predicate> preds) {
  double s = 1.0;
  for (const auto& p : preds) s *= c.predicate_selectivity(p);
  return s;
}

inline double join_domain(const Catalog& c, const JoinKeys& keys) {
  return std::max(c.column_domain(keys[0]), c.column_domain(keys[1]));
}

// classic independence model: scans are rows x selectivities, a join divides
// the product of its inputs by the larger key domain
inline double vanilla_rec(const Catalog& c, const PlanNode& n, const double* sibling_est) {
  if (n.is_leaf()) {
    double standalone = 1.0;
    if (n.relation) standalone = c.table_rows(*n.relation);
    standalone *= filters_selectivity(c, n.filters);
    if (!n.is_subquery_of_sibling || sibling_est == nullptr) return std::max(1.0, standalone);
    if (n.join_keys)
      return std::max(1.0, *sibling_est * standalone / join_domain(c, *n.join_keys));
    return std::max(1.0, *sibling_est * filters_selectivity(c, n.filters));
  }
  if (n.children.size() == 1) {
    double child = vanilla_rec(c, n.children[0], nullptr);
    return std::max(1.0, child * filters_selectivity(c, n.filters));
  }
  double left = vanilla_rec(c, n.children[0], nullptr);
  const PlanNode& rc = n.children[1];
  double right = vanilla_rec(c, rc, &left);
  double est;
  if (rc.is_leaf() && rc.is_subquery_of_sibling) {
    est = right;  // the join or filter already happened inside the subquery child
  } else if (n.join_keys) {
    est = left * right / join_domain(c, *n.join_keys);
  } else {
    est = left * right;
  }
  return std::max(1.0, est * filters_selectivity(c, n.filters));
}

}  // namespace detail

inline double vanilla_estimate(const Catalog& catalog, const PlanNode& n) {
  return detail::vanilla_rec(catalog, n, nullptr);
}

// writes vanilla estimates into est_rows/calibrated_rows for every node
inline void annotate_estimates(PlanTree& t, const Catalog& catalog) {
  struct Walker {
    const Catalog& c;
    void walk(PlanNode& n, const double* sibling_est) {
      double est = detail::vanilla_rec(c, n, sibling_est);
      if (n.children.size() == 2) {
        double left = detail::vanilla_rec(c, n.children[0], nullptr);
        walk(n.children[0], nullptr);
        walk(n.children[1], &left);
      } else if (n.children.size() == 1) {
        walk(n.children[0], nullptr);
      }
      n.est_rows = est;
      n.calibrated_rows = est;
    }
  };
  Walker{catalog}.walk(t.root, nullptr);
}

// ---------------------------------------------------------------------------
// cost oracle

// Row-linear per-operator work plus a per-node overhead; multiplicative
// lognormal noise models runtime fluctuation. Node time is inclusive.
struct CostOracleParams {
  double scan_ms_per_row = 0.002;
  double hash_build_ms_per_row = 0.004;
  double probe_ms_per_row = 0.0015;
  double nested_loop_ms_per_pair = 2e-6;
  double index_lookup_ms_per_probe = 0.004;
  double node_overhead_ms = 0.05;
  double noise_sigma = 0.15;
};

namespace detail {

struct Annotator {
  const TableSet& tables;
  const CostOracleParams& oracle;
  Rng rng;
  std::size_t row_cap;

  double noise() {
    if (oracle.noise_sigma <= 0) return 1.0;
    return std::exp(oracle.noise_sigma * rng.normal());
  }

  double scan_work(const PlanNode& n, double out_rows, double probes) {
    double table_rows =
        n.relation ? static_cast<double>(table_of(tables, *n.relation).rows()) : 0.0;
    if (n.op == "Index Scan" || n.op == "Index Only Scan")
      return oracle.index_lookup_ms_per_probe * (probes + out_rows);
    if (n.op == "Bitmap Scan")
      return oracle.index_lookup_ms_per_probe * out_rows + 0.1 * oracle.scan_ms_per_row * table_rows;
    return oracle.scan_ms_per_row * table_rows;
  }

  double join_work(const PlanNode& n, double l, double r, double out) {
    if (n.op == "Hash Join")
      return oracle.hash_build_ms_per_row * r + oracle.probe_ms_per_row * (l + out);
    if (n.op == "Merge Join") return oracle.probe_ms_per_row * (l + r + out);
    if (n.op == "Nested Loop")
      return oracle.nested_loop_ms_per_pair * l * r + oracle.probe_ms_per_row * out;
    return oracle.probe_ms_per_row * (l + r + out);
  }

  Materialized annotate(PlanNode& n) {
    if (n.is_leaf()) {
      Materialized m = scan_table(tables, *n.relation, n.filters);
      double out = static_cast<double>(m.rows());
      n.actual_rows = static_cast<std::int64_t>(m.rows());
      n.actual_time_ms =
          (scan_work(n, out, 1.0) + oracle.node_overhead_ms) * noise();
      return m;
    }
    if (n.children.size() == 1) {
      Materialized child = annotate(n.children[0]);
      Materialized m = filter_materialized(std::move(child), tables, n.filters);
      double out = static_cast<double>(m.rows());
      double own = oracle.probe_ms_per_row * out + oracle.node_overhead_ms;
      n.actual_rows = static_cast<std::int64_t>(m.rows());
      n.actual_time_ms = own * noise() + *n.children[0].actual_time_ms;
      return m;
    }
    Materialized left = annotate(n.children[0]);
    PlanNode& rc = n.children[1];
    double l_rows = static_cast<double>(left.rows());
    Materialized combined;
    double own = 0;
    if (rc.is_leaf() && rc.is_subquery_of_sibling) {
      if (rc.join_keys) {
        Materialized base = scan_table(tables, *rc.relation, rc.filters);
        auto [lk, rk] = orient_keys(left, *rc.join_keys);
        combined = hash_join(left, base, tables, lk, rk, row_cap);
        double out = static_cast<double>(combined.rows());
        // one index probe per outer row, one emission per produced row
        rc.actual_rows = static_cast<std::int64_t>(combined.rows());
        rc.actual_time_ms =
            (oracle.index_lookup_ms_per_probe * (l_rows + out) + oracle.node_overhead_ms) *
            noise();
      } else {
        combined = filter_materialized(std::move(left), tables, rc.filters);
        double scanned = l_rows;
        rc.actual_rows = static_cast<std::int64_t>(combined.rows());
        rc.actual_time_ms =
            (oracle.probe_ms_per_row * scanned + oracle.node_overhead_ms) * noise();
      }
      Materialized result = filter_materialized(std::move(combined), tables, n.filters);
      double out = static_cast<double>(result.rows());
      own = oracle.probe_ms_per_row * out + oracle.node_overhead_ms;
      n.actual_rows = static_cast<std::int64_t>(result.rows());
      n.actual_time_ms =
          own * noise() + *n.children[0].actual_time_ms + *rc.actual_time_ms;
      return result;
    }
    Materialized right = annotate(rc);
    auto [lk, rk] = orient_keys(left, *n.join_keys);
    combined = hash_join(left, right, tables, lk, rk, row_cap);
    Materialized result = filter_materialized(std::move(combined), tables, n.filters);
    double r_rows = static_cast<double>(right.rows());
    double out = static_cast<double>(result.rows());
    own = join_work(n, l_rows, r_rows, out) + oracle.node_overhead_ms;
    n.actual_rows = static_cast<std::int64_t>(result.rows());
    n.actual_time_ms =
        own * noise() + *n.children[0].actual_time_ms + *n.children[1].actual_time_ms;
    return result;
  }
};

}  // namespace detail

// Labels every node with exact cardinalities and oracle runtimes (inclusive).
inline void annotate_actuals(PlanTree& t, const TableSet& tables, const CostOracleParams& oracle,
                             std::uint64_t noise_seed, std::size_t row_cap = 1u << 31) {
  detail::Annotator a{tables, oracle, Rng(noise_seed), row_cap};
  a.annotate(t.root);
}

// ---------------------------------------------------------------------------
// classical baseline

namespace detail {

inline double baseline_rec(const Catalog& c, const CostOracleParams& o, const PlanNode& n,
                           double outer_est) {
  const double out = n.est_rows;
  if (n.is_leaf()) {
    double table_rows = n.relation ? c.table_rows(*n.relation) : 1.0;
    double own;
    if (n.is_subquery_of_sibling && n.join_keys)
      own = o.index_lookup_ms_per_probe * (outer_est + out);
    else if (n.is_subquery_of_sibling)
      own = o.probe_ms_per_row * outer_est;
    else if (n.op == "Index Scan" || n.op == "Index Only Scan")
      own = o.index_lookup_ms_per_probe * (1.0 + out);
    else if (n.op == "Bitmap Scan")
      own = o.index_lookup_ms_per_probe * out + 0.1 * o.scan_ms_per_row * table_rows;
    else
      own = o.scan_ms_per_row * table_rows;
    return own + o.node_overhead_ms;
  }
  if (n.children.size() == 1)
    return baseline_rec(c, o, n.children[0], 0.0) + o.probe_ms_per_row * out +
           o.node_overhead_ms;
  const double l = n.children[0].est_rows;
  const double r = n.children[1].est_rows;
  double own;
  if (n.children[1].is_leaf() && n.children[1].is_subquery_of_sibling) {
    own = o.probe_ms_per_row * out;
  } else if (n.op == "Hash Join") {
    own = o.hash_build_ms_per_row * r + o.probe_ms_per_row * (l + out);
  } else if (n.op == "Merge Join") {
    own = o.probe_ms_per_row * (l + r + out);
  } else if (n.op == "Nested Loop") {
    own = o.nested_loop_ms_per_pair * l * r + o.probe_ms_per_row * out;
  } else {
    own = o.probe_ms_per_row * (l + r + out);
  }
  return own + o.node_overhead_ms + baseline_rec(c, o, n.children[0], 0.0) +
         baseline_rec(c, o, n.children[1], l);
}

}  // namespace detail

// Textbook cost model driven by the plans' own cardinality estimates: the cost
// formulas match the runtime oracle, so its error comes from cardinalities.
inline double baseline_cost_ms(const Catalog& catalog, const CostOracleParams& oracle,
                               const PlanTree& t) {
  return detail::baseline_rec(catalog, oracle, t.root, 0.0);
}

// Global scale minimizing mean Q-error of scale x score against the labels;
// the objective is convex in log(scale).
inline double fit_baseline_scale(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw config_error("baseline fit needs matching nonempty score/label lists");
  double lo = 0, hi = 0;
  std::vector<double> delta(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] <= 0 || labels[i] <= 0) throw config_error("baseline fit needs positive values");
    delta[i] = std::log(labels[i]) - std::log(scores[i]);
    lo = std::min(lo, delta[i]);
    hi = std::max(hi, delta[i]);
  }
  auto mean_q = [&](double logk) {
    double s = 0;
    for (double d : delta) s += std::exp(std::abs(logk - d));
    return s / static_cast<double>(delta.size());
  };
  for (int it = 0; it < 200; ++it) {
    double a = lo + (hi - lo) / 3, b = hi - (hi - lo) / 3;
    if (mean_q(a) < mean_q(b))
      hi = b;
    else
      lo = a;
  }
  return std::exp(0.5 * (lo + hi));
}

// ---------------------------------------------------------------------------
// workload generation

namespace detail {

struct PlanBuilder {
  const Catalog& catalog;
  const TableSet& tables;
  Rng& rng;

  std::map<std::string, std::vector<std::string>> adjacency;  // table -> joinable tables

  explicit PlanBuilder(const Catalog& c, const TableSet& t, Rng& r)
      : catalog(c), tables(t), rng(r) {
    for (const auto& d : c.join_pairs) {
      adjacency[d.table_a].push_back(d.table_b);
      adjacency[d.table_b].push_back(d.table_a);
    }
  }

  Predicate make_predicate(const TableData& t, int col) {
    const auto& values = t.cells[static_cast<std::size_t>(col)];
    double lo = *std::min_element(values.begin(), values.end());
    double hi = *std::max_element(values.begin(), values.end());
    Predicate p;
    p.column = t.column_id(static_cast<std::size_t>(col));
    double v = std::floor(rng.range(lo, hi + 1.0));
    double span = hi - lo;
    int roll = rng.int_range(0, 99);
    if (span > 200) roll = std::max(roll, 20);  // only range ops on wide columns
    if (roll < 20)
      p.op = PredOp::EQ;
    else if (roll < 45)
      p.op = PredOp::LT;
    else if (roll < 70)
      p.op = PredOp::GT;
    else if (roll < 85)
      p.op = PredOp::LE;
    else
      p.op = PredOp::GE;
    // keep range predicates away from the extremes so they actually select
    if (p.op != PredOp::EQ) v = std::floor(lo + (0.15 + 0.7 * rng.real()) * std::max(1.0, span));
    p.value = v;
    return p;
  }

  std::vector<Predicate> make_filters(const std::string& table, bool at_least_one) {
    const TableData& t = table_of(tables, table);
    std::vector<Predicate> out;
    int roll = rng.int_range(0, 99);
    int count = roll < 25 ? 0 : roll < 60 ? 1 : roll < 85 ? 2 : 3;
    if (at_least_one) count = std::max(count, 1);
    // correlated c1/c2 pair: big conjunction error under independence
    if (count >= 2 && t.column_index("c2") >= 0 && rng.chance(0.5)) {
      double x = std::floor(rng.range(200.0, 900.0));
      Predicate a{t.name + ".c1", PredOp::LT, x};
      Predicate b{t.name + ".c2", PredOp::LT, x + 100.0};
      out.push_back(a);
      out.push_back(b);
      count -= 2;
    }
    for (int i = 0; i < count; ++i) {
      int col = rng.int_range(1, static_cast<int>(t.columns.size()) - 1);
      if (col < 1) break;  // key-only table
      out.push_back(make_predicate(t, col));
    }
    return out;
  }

  PlanNode make_leaf(const std::string& table) {
    PlanNode n;
    n.relation = table;
    n.filters = make_filters(table, false);
    if (!n.filters.empty() && rng.chance(0.35))
      n.op = "Index Scan";
    else if (!n.filters.empty() && rng.chance(0.2))
      n.op = "Bitmap Scan";
    else
      n.op = "Seq Scan";
    return n;
  }

  bool joinable(const std::string& a, const std::string& b) const {
    auto it = adjacency.find(a);
    if (it == adjacency.end()) return false;
    return std::find(it->second.begin(), it->second.end(), b) != it->second.end();
  }

  PlanNode wrap_unary(PlanNode child, const char* op) {
    PlanNode n;
    n.op = op;
    n.children.push_back(std::move(child));
    return n;
  }

  // connected random table sequence; sequence[i] joins some earlier table
  std::vector<std::pair<std::string, std::string>> pick_tables(int m) {
    std::vector<std::string> names;
    for (const auto& [name, t] : tables) names.push_back(name);
    std::vector<std::pair<std::string, std::string>> out;  // (table, partner)
    std::string first = names[rng.below(names.size())];
    out.emplace_back(first, "");
    std::set<std::string> used = {first};
    for (int i = 1; i < m; ++i) {
      std::vector<std::pair<std::string, std::string>> candidates;
      for (const auto& u : used)
        for (const auto& v : adjacency[u])
          if (!used.count(v)) candidates.emplace_back(v, u);
      if (candidates.empty()) break;
      auto pick = candidates[rng.below(candidates.size())];
      out.push_back(pick);
      used.insert(pick.first);
    }
    return out;
  }

  PlanNode build(int target_tables) {
    auto seq = pick_tables(target_tables);
    PlanNode cur = make_leaf(seq[0].first);
    std::set<std::string> in_plan = {seq[0].first};
    std::size_t i = 1;
    while (i < seq.size()) {
      const std::string& t = seq[i].first;
      const std::string& partner = seq[i].second;
      JoinKeys keys = {partner + ".k", t + ".k"};
      double style = rng.real();
      if (style < 0.25) {
        // subquery join: the inner leaf probes its table per outer row
        PlanNode leaf = make_leaf(t);
        leaf.op = "Index Scan";
        leaf.is_subquery_of_sibling = true;
        leaf.join_keys = keys;
        PlanNode join;
        join.op = "Nested Loop";
        join.children.push_back(std::move(cur));
        join.children.push_back(std::move(leaf));
        cur = std::move(join);
      } else if (style < 0.40 && i + 1 < seq.size() && seq[i + 1].second == t) {
        // bushy: join the next two tables first, then attach the pair
        PlanNode a = make_leaf(t);
        PlanNode b = make_leaf(seq[i + 1].first);
        PlanNode sub;
        sub.op = rng.chance(0.5) ? "Hash Join" : "Merge Join";
        sub.join_keys = JoinKeys{t + ".k", seq[i + 1].first + ".k"};
        if (sub.op == "Merge Join") {
          if (rng.chance(0.5)) a = wrap_unary(std::move(a), "Sort");
          if (rng.chance(0.5)) b = wrap_unary(std::move(b), "Sort");
        }
        sub.children.push_back(std::move(a));
        sub.children.push_back(std::move(b));
        PlanNode join;
        join.op = "Hash Join";
        join.join_keys = keys;
        PlanNode right = std::move(sub);
        if (rng.chance(0.4)) right = wrap_unary(std::move(right), "Hash");
        join.children.push_back(std::move(cur));
        join.children.push_back(std::move(right));
        cur = std::move(join);
        in_plan.insert(seq[i + 1].first);
        ++i;
      } else {
        PlanNode leaf = make_leaf(t);
        PlanNode join;
        double opr = rng.real();
        join.op = opr < 0.55 ? "Hash Join" : opr < 0.75 ? "Merge Join" : "Nested Loop";
        join.join_keys = keys;
        PlanNode right = std::move(leaf);
        if (join.op == "Hash Join" && rng.chance(0.5))
          right = wrap_unary(std::move(right), "Hash");
        else if (join.op == "Merge Join" && rng.chance(0.5))
          right = wrap_unary(std::move(right), "Sort");
        else if (join.op == "Nested Loop" && rng.chance(0.3))
          right = wrap_unary(std::move(right), "Materialize");
        join.children.push_back(std::move(cur));
        join.children.push_back(std::move(right));
        cur = std::move(join);
      }
      in_plan.insert(t);
      ++i;
    }
    // occasional correlated re-filter of the joined stream
    if (in_plan.size() >= 2 && rng.chance(0.15)) {
      std::vector<std::string> pool(in_plan.begin(), in_plan.end());
      const std::string& target = pool[rng.below(pool.size())];
      PlanNode leaf;
      leaf.op = "Subquery Scan";
      leaf.relation = target;
      leaf.is_subquery_of_sibling = true;
      leaf.filters = make_filters(target, true);
      PlanNode apply;
      apply.op = "Nested Loop";
      apply.children.push_back(std::move(cur));
      apply.children.push_back(std::move(leaf));
      cur = std::move(apply);
    }
    if (rng.chance(0.12)) cur = wrap_unary(std::move(cur), "Sort");
    return cur;
  }
};

inline void assign_ids(PlanNode& n, int& next) {
  n.node_id = next++;
  for (auto& c : n.children) assign_ids(c, next);
}

}  // namespace detail

// Random plans over 1-5 tables (left-deep plus occasional bushy shapes and
// subquery leaves), labeled with vanilla estimates and oracle runtimes, then
// canonicalized. Regenerates any plan whose intermediates exceed the row cap.
inline std::vector<PlanTree> gen_workload(const Catalog& catalog, const TableSet& tables,
                                          int n_plans, const CostOracleParams& oracle,
                                          std::uint64_t seed, std::size_t row_cap = 2000000) {
  if (n_plans < 0) throw config_error("plan count must be nonnegative");
  Rng rng(seed);
  detail::PlanBuilder builder(catalog, tables, rng);
  std::vector<PlanTree> out;
  out.reserve(static_cast<std::size_t>(n_plans));
  const int max_tables = std::min<int>(5, static_cast<int>(tables.size()));
  while (static_cast<int>(out.size()) < n_plans) {
    int roll = rng.int_range(0, 99);
    int m = roll < 10 ? 1 : roll < 30 ? 2 : roll < 55 ? 3 : roll < 80 ? 4 : 5;
    m = std::min(m, max_tables);
    PlanTree t;
    t.source = PlanSource::Synthetic;
    bool ok = false;
    for (int attempt = 0; attempt < 12 && !ok; ++attempt) {
      try {
        t.root = builder.build(m);
        int next_id = 0;
        detail::assign_ids(t.root, next_id);
        annotate_estimates(t, catalog);
        annotate_actuals(t, tables, oracle, rng.next(), row_cap);
        ok = true;
      } catch (const cardinality_cap_error&) {
        m = std::max(2, m - 1);  // heavy plan: retry smaller
      }
    }
    if (!ok) continue;
    t = merge_unary(std::move(t));
    int next_id = 0;
    detail::assign_ids(t.root, next_id);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace fasco
