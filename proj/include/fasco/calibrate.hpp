#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fasco/catalog.hpp"
#include "fasco/features.hpp"
#include "fasco/plan.hpp"
#include "fasco/util.hpp"

namespace fasco {

// Identity of a two-table join; sides are stored in canonical (sorted key)
// order so either orientation of a plan's join maps to the same list.
struct PairKey {
  std::string table_a;
  std::string table_b;
  std::string key_a;  // "table.column"
  std::string key_b;

  static PairKey canonical(std::string ta, std::string ka, std::string tb, std::string kb) {
    PairKey p;
    if (kb < ka) {
      std::swap(ta, tb);
      std::swap(ka, kb);
    }
    p.table_a = std::move(ta);
    p.table_b = std::move(tb);
    p.key_a = std::move(ka);
    p.key_b = std::move(kb);
    return p;
  }

  static PairKey of(const JoinPairDecl& d) {
    return canonical(d.table_a, d.key_a, d.table_b, d.key_b);
  }

  std::string id() const { return key_a + "|" + key_b; }

  auto operator<=>(const PairKey&) const = default;
};

// Sample of an inner join kept at rate 1/p, stored row-major over the
// retained columns of both tables.
struct LookupList {
  PairKey pair;
  std::vector<std::string> columns;  // full ids, e.g. "t1.k"
  std::vector<double> rows;          // row-major, rows x columns
  double inv_sample_rate = 1.0;      // p >= 1; p == 1 means the full join
  std::uint64_t built_at = 1;        // bumped on every rebuild

  std::size_t row_count() const { return columns.empty() ? 0 : rows.size() / columns.size(); }
  std::size_t byte_size() const { return rows.size() * sizeof(double); }

  int column_index(std::string_view id) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == id) return static_cast<int>(i);
    return -1;
  }
};

// Builds the sample for one declared pair. p is the smallest rate >= 1 whose
// expected retained size fits the byte budget (p = 1 keeps the entire join);
// rows are kept independently with probability 1/p, seeded.
inline LookupList build_lookup_list(const TableSet& tables, const JoinPairDecl& decl,
                                    std::size_t byte_budget, std::uint64_t seed) {
  if (byte_budget == 0) throw config_error("lookup list byte budget must be positive");
  const TableData& ta = table_of(tables, decl.table_a);
  const TableData& tb = table_of(tables, decl.table_b);
  auto [ka_table, ka_col] = split_column(decl.key_a);
  auto [kb_table, kb_col] = split_column(decl.key_b);
  if (ka_table != decl.table_a || kb_table != decl.table_b)
    throw config_error("join pair keys do not name the declared tables");
  int ca = ta.column_index(ka_col);
  int cb = tb.column_index(kb_col);
  if (ca < 0) throw config_error("unknown join key column '" + decl.key_a + "'");
  if (cb < 0) throw config_error("unknown join key column '" + decl.key_b + "'");

  LookupList list;
  list.pair = PairKey::of(decl);
  for (std::size_t i = 0; i < ta.columns.size(); ++i) list.columns.push_back(ta.column_id(i));
  for (std::size_t i = 0; i < tb.columns.size(); ++i) list.columns.push_back(tb.column_id(i));

  // group the right side by key value, then count the join before sampling
  std::map<long long, std::vector<std::size_t>> right;
  const auto& bkey = tb.cells[static_cast<std::size_t>(cb)];
  for (std::size_t r = 0; r < bkey.size(); ++r)
    right[static_cast<long long>(std::llround(bkey[r]))].push_back(r);

  const auto& akey = ta.cells[static_cast<std::size_t>(ca)];
  double join_rows = 0;
  for (std::size_t r = 0; r < akey.size(); ++r) {
    auto it = right.find(static_cast<long long>(std::llround(akey[r])));
    if (it != right.end()) join_rows += static_cast<double>(it->second.size());
  }

  const double row_bytes = static_cast<double>(list.columns.size()) * sizeof(double);
  double p = 1.0;
  if (join_rows * row_bytes > static_cast<double>(byte_budget))
    p = join_rows * row_bytes / static_cast<double>(byte_budget);
  list.inv_sample_rate = p;

  Rng rng(seed);
  const double keep = 1.0 / p;
  list.rows.reserve(static_cast<std::size_t>(std::min(join_rows, join_rows / p + 64.0)) *
                    list.columns.size());
  for (std::size_t r = 0; r < akey.size(); ++r) {
    auto it = right.find(static_cast<long long>(std::llround(akey[r])));
    if (it == right.end()) continue;
    for (std::size_t rb : it->second) {
      if (p > 1.0 && rng.real() >= keep) continue;
      for (const auto& col : ta.cells) list.rows.push_back(col[r]);
      for (const auto& col : tb.cells) list.rows.push_back(col[rb]);
    }
  }
  return list;
}

// qualified sample count: rows satisfying every predicate
inline double qualified_count(const LookupList& list, std::span<const Predicate> predicates) {
  std::vector<int> cols(predicates.size());
  for (std::size_t i = 0; i < predicates.size(); ++i) {
    cols[i] = list.column_index(predicates[i].column);
    if (cols[i] < 0)
      throw config_error("lookup list for " + list.pair.id() + " does not retain column '" +
                         predicates[i].column + "'");
  }
  const std::size_t width = list.columns.size();
  const std::size_t n = list.row_count();
  double c = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = list.rows.data() + r * width;
    bool ok = true;
    for (std::size_t i = 0; i < predicates.size() && ok; ++i)
      ok = predicate_holds(row[static_cast<std::size_t>(cols[i])], predicates[i].op,
                           predicates[i].value);
    if (ok) c += 1.0;
  }
  return c;
}

// bias factor (c*p + p) / (c~ + p); c~ is the node's vanilla estimate
inline double calibration_factor(const LookupList& list, std::span<const Predicate> predicates,
                                 double vanilla_rows) {
  const double c = qualified_count(list, predicates);
  const double p = list.inv_sample_rate;
  return (c * p + p) / (vanilla_rows + p);
}

// ---------------------------------------------------------------------------
// store

// Immutable snapshots behind shared pointers so a rebuild can swap a list
// while readers keep using the one they already fetched.
class LookupStore {
 public:
  LookupStore() = default;
  LookupStore(const LookupStore& other) {
    std::shared_lock lock(other.mu_);
    lists_ = other.lists_;
  }
  LookupStore& operator=(const LookupStore& other) {
    if (this == &other) return *this;
    auto copy = [&] {
      std::shared_lock lock(other.mu_);
      return other.lists_;
    }();
    std::unique_lock lock(mu_);
    lists_ = std::move(copy);
    return *this;
  }

  void put(LookupList list) {
    auto ptr = std::make_shared<const LookupList>(std::move(list));
    std::unique_lock lock(mu_);
    lists_[ptr->pair.id()] = std::move(ptr);
  }

  std::shared_ptr<const LookupList> find(const PairKey& key) const {
    std::shared_lock lock(mu_);
    auto it = lists_.find(key.id());
    return it == lists_.end() ? nullptr : it->second;
  }

  std::vector<PairKey> pairs() const {
    std::shared_lock lock(mu_);
    std::vector<PairKey> out;
    out.reserve(lists_.size());
    for (const auto& [id, list] : lists_) out.push_back(list->pair);
    return out;
  }

  std::vector<std::shared_ptr<const LookupList>> all() const {
    std::shared_lock lock(mu_);
    std::vector<std::shared_ptr<const LookupList>> out;
    out.reserve(lists_.size());
    for (const auto& [id, list] : lists_) out.push_back(list);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return lists_.size();
  }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const LookupList>> lists_;
};

// (Re)builds one list per declared pair against the current table contents.
// Existing entries are replaced atomically with a bumped version counter.
inline void rebuild_store(LookupStore& store, const TableSet& tables,
                          std::span<const JoinPairDecl> pairs, std::size_t byte_budget,
                          std::uint64_t seed, unsigned max_threads = 0) {
  if (max_threads == 0) max_threads = std::max(1u, std::thread::hardware_concurrency());
  max_threads = env_thread_cap(max_threads);
  std::vector<LookupList> built(pairs.size());
  std::vector<std::thread> workers;
  std::size_t next = 0;
  std::mutex next_mu;
  auto work = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(next_mu);
        if (next >= pairs.size()) return;
        i = next++;
      }
      built[i] = build_lookup_list(tables, pairs[i], byte_budget,
                                   seed ^ fnv1a64(PairKey::of(pairs[i]).id()));
    }
  };
  unsigned n = std::min<unsigned>(max_threads, static_cast<unsigned>(pairs.size()));
  if (n <= 1) {
    work();
  } else {
    for (unsigned i = 0; i < n; ++i) workers.emplace_back(work);
    for (auto& w : workers) w.join();
  }
  for (auto& list : built) {
    if (auto old = store.find(list.pair)) list.built_at = old->built_at + 1;
    store.put(std::move(list));
  }
}

// ---------------------------------------------------------------------------
// applying calibration to a plan

// internal nodes whose children are both leaves
inline std::vector<const PlanNode*> find_lowest_merge_nodes(const PlanTree& t) {
  std::vector<const PlanNode*> out;
  for (const PlanNode* n : post_order(t))
    if (n->children.size() == 2 && n->children[0].is_leaf() && n->children[1].is_leaf())
      out.push_back(n);
  return out;
}

// Nodes whose calibrated cardinality moves together with n: n itself, its
// ancestors, its two children, and any sibling of n or of an ancestor that is
// a subquery of that node.
inline std::set<int> related_nodes(const PlanTree& t, int node_id) {
  TreeIndex idx = TreeIndex::build(t);
  auto at = idx.by_id.find(node_id);
  if (at == idx.by_id.end())
    throw config_error("related_nodes: no node with id " + std::to_string(node_id));
  std::set<int> out;
  out.insert(node_id);
  for (const auto& c : at->second->children) out.insert(c.node_id);
  int cur = node_id;
  for (;;) {
    if (auto sib = idx.sibling.find(cur); sib != idx.sibling.end()) {
      const PlanNode* s = idx.by_id.at(sib->second);
      if (s->is_subquery_of_sibling) out.insert(s->node_id);
    }
    auto par = idx.parent.find(cur);
    if (par == idx.parent.end()) break;
    cur = par->second;
    out.insert(cur);
  }
  return out;
}

struct CalibrationEntry {
  int node_id = 0;
  double qualified = 0;      // c
  double vanilla_rows = 0;   // c~
  double factor = 1.0;
  std::set<int> related;
};

struct CalibrationReport {
  std::vector<CalibrationEntry> entries;
  std::vector<int> skipped;  // lowest merge nodes with no matching list
};

namespace detail {

// join identity of a lowest merge node: its own keys, else the keys a
// subquery child carries (the join then happened inside that child)
inline std::optional<PairKey> merge_pair(const PlanNode& n) {
  const PlanNode& l = n.children[0];
  const PlanNode& r = n.children[1];
  const JoinKeys* keys = nullptr;
  if (n.join_keys)
    keys = &*n.join_keys;
  else if (r.join_keys)
    keys = &*r.join_keys;
  else if (l.join_keys)
    keys = &*l.join_keys;
  if (keys == nullptr) return std::nullopt;
  auto [t0, c0] = split_column((*keys)[0]);
  auto [t1, c1] = split_column((*keys)[1]);
  if (t0.empty() || t1.empty()) return std::nullopt;
  return PairKey::canonical(t0, (*keys)[0], t1, (*keys)[1]);
}

}  // namespace detail

// Computes one factor per lowest merge node (skipping nodes whose pair has no
// list) and multiplies it into the calibrated_rows of every related node.
// Factors compose multiplicatively; est_rows and labels never change.
inline std::pair<PlanTree, CalibrationReport> apply_calibration(PlanTree tree,
                                                                const LookupStore& store) {
  CalibrationReport report;
  std::map<int, double> factor_product;
  for (const PlanNode* n : find_lowest_merge_nodes(tree)) {
    auto pair = detail::merge_pair(*n);
    std::shared_ptr<const LookupList> list;
    if (pair) list = store.find(*pair);
    if (!list) {
      report.skipped.push_back(n->node_id);
      continue;
    }
    std::vector<Predicate> predicates = n->children[0].filters;
    predicates.insert(predicates.end(), n->children[1].filters.begin(),
                      n->children[1].filters.end());
    CalibrationEntry entry;
    entry.node_id = n->node_id;
    entry.qualified = qualified_count(*list, predicates);
    entry.vanilla_rows = n->est_rows;
    entry.factor = (entry.qualified * list->inv_sample_rate + list->inv_sample_rate) /
                   (entry.vanilla_rows + list->inv_sample_rate);
    entry.related = related_nodes(tree, n->node_id);
    for (int id : entry.related) {
      auto [it, inserted] = factor_product.try_emplace(id, entry.factor);
      if (!inserted) it->second *= entry.factor;
    }
    report.entries.push_back(std::move(entry));
  }
  for (PlanNode* n : post_order(tree)) {
    auto it = factor_product.find(n->node_id);
    if (it == factor_product.end()) continue;
    n->calibrated_rows = std::max(1.0, n->est_rows * it->second);
  }
  return {std::move(tree), std::move(report)};
}

}  // namespace fasco
