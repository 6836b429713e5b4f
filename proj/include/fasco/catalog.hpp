#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fasco/plan.hpp"
#include "fasco/util.hpp"

namespace fasco {

// Equi-width histogram with integer-aligned bucket edges. Bucket b covers
// [edges[b], edges[b+1]); the last edge sits one past the column maximum.
struct Histogram {
  std::vector<double> edges;   // size B+1, strictly increasing
  std::vector<double> counts;  // size B

  double total() const {
    double s = 0;
    for (double c : counts) s += c;
    return s;
  }

  double span() const { return edges.empty() ? 0.0 : edges.back() - edges.front(); }

  // P(X < v) under the uniform-within-bucket assumption
  double fraction_below(double v) const {
    if (edges.empty() || total() <= 0) return 0.0;
    if (v <= edges.front()) return 0.0;
    if (v >= edges.back()) return 1.0;
    double acc = 0;
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
      if (v >= edges[b + 1]) {
        acc += counts[b];
        continue;
      }
      double w = edges[b + 1] - edges[b];
      if (w > 0) acc += counts[b] * (v - edges[b]) / w;
      break;
    }
    return std::clamp(acc / total(), 0.0, 1.0);
  }

  // P(X == v) treating each bucket as uniform over its integer points
  double fraction_equal(double v) const {
    if (edges.empty() || total() <= 0) return 0.0;
    if (v < edges.front() || v >= edges.back()) return 0.0;
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    std::size_t b = static_cast<std::size_t>(it - edges.begin());
    if (b == 0) return 0.0;
    --b;
    if (b >= counts.size()) return 0.0;
    double w = edges[b + 1] - edges[b];
    if (w <= 0) return 0.0;
    return std::clamp(counts[b] / (total() * w), 0.0, 1.0);
  }

  // String literals carry no information for a numeric histogram.
  double selectivity(PredOp op, const PredValue& value) const {
    if (!std::holds_alternative<double>(value)) return 1.0;
    double v = std::get<double>(value);
    double lt = fraction_below(v);
    double eq = fraction_equal(v);
    switch (op) {
      case PredOp::EQ: return eq;
      case PredOp::LT: return lt;
      case PredOp::LE: return std::clamp(lt + eq, 0.0, 1.0);
      case PredOp::GT: return std::clamp(1.0 - lt - eq, 0.0, 1.0);
      case PredOp::GE: return std::clamp(1.0 - lt, 0.0, 1.0);
    }
    return 1.0;
  }
};

inline Histogram build_histogram(std::span<const double> values, int buckets) {
  Histogram h;
  if (values.empty()) {
    h.edges = {0.0, 1.0};
    h.counts = {0.0};
    return h;
  }
  double mn = values[0], mx = values[0];
  for (double v : values) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  double lo = std::floor(mn);
  double points = std::floor(mx) - lo + 1.0;  // integer points in the domain
  int b = std::max(1, std::min<int>(buckets, static_cast<int>(points)));
  h.edges.resize(static_cast<std::size_t>(b) + 1);
  for (int k = 0; k <= b; ++k)
    h.edges[static_cast<std::size_t>(k)] = lo + std::floor(k * points / b);
  h.counts.assign(static_cast<std::size_t>(b), 0.0);
  for (double v : values) {
    auto it = std::upper_bound(h.edges.begin(), h.edges.end(), v);
    std::size_t idx = it == h.edges.begin() ? 0 : static_cast<std::size_t>(it - h.edges.begin()) - 1;
    if (idx >= h.counts.size()) idx = h.counts.size() - 1;
    h.counts[idx] += 1.0;
  }
  return h;
}

struct JoinPairDecl {
  std::string table_a;
  std::string table_b;
  std::string key_a;  // "table.column"
  std::string key_b;

  bool operator==(const JoinPairDecl&) const = default;
};

struct Catalog {
  std::map<std::string, double> tables;       // name -> row count
  std::map<std::string, Histogram> columns;   // "table.column" -> histogram
  std::vector<JoinPairDecl> join_pairs;

  double table_rows(const std::string& name) const {
    auto it = tables.find(name);
    if (it == tables.end()) throw catalog_error("unknown relation '" + name + "'");
    return it->second;
  }

  double max_table_rows() const {
    double m = 1.0;
    for (const auto& [name, rows] : tables) m = std::max(m, rows);
    return m;
  }

  const Histogram* column(const std::string& id) const {
    auto it = columns.find(id);
    return it == columns.end() ? nullptr : &it->second;
  }

  double predicate_selectivity(const Predicate& p) const {
    const Histogram* h = column(p.column);
    if (h == nullptr) return 1.0;  // no statistics, assume nothing
    return h->selectivity(p.op, p.value);
  }

  // integer domain size of a column as seen by the statistics
  double column_domain(const std::string& id) const {
    const Histogram* h = column(id);
    if (h == nullptr) return 1.0;
    return std::max(1.0, h->span());
  }
};

inline std::pair<std::string, std::string> split_column(std::string_view id) {
  auto dot = id.find('.');
  if (dot == std::string_view::npos) return {std::string(), std::string(id)};
  return {std::string(id.substr(0, dot)), std::string(id.substr(dot + 1))};
}

// In-memory column store; cells are numeric.
struct TableData {
  std::string name;
  std::vector<std::string> columns;        // short names, e.g. "k", "c1"
  std::vector<std::vector<double>> cells;  // one vector per column

  std::size_t rows() const { return cells.empty() ? 0 : cells.front().size(); }

  int column_index(std::string_view short_name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == short_name) return static_cast<int>(i);
    return -1;
  }

  std::string column_id(std::size_t i) const { return name + "." + columns[i]; }
};

using TableSet = std::map<std::string, TableData>;

inline const TableData& table_of(const TableSet& set, const std::string& name) {
  auto it = set.find(name);
  if (it == set.end()) throw catalog_error("unknown relation '" + name + "'");
  return it->second;
}

inline bool predicate_holds(double cell, PredOp op, const PredValue& value) {
  if (!std::holds_alternative<double>(value)) return false;
  double v = std::get<double>(value);
  switch (op) {
    case PredOp::EQ: return cell == v;
    case PredOp::LT: return cell < v;
    case PredOp::GT: return cell > v;
    case PredOp::LE: return cell <= v;
    case PredOp::GE: return cell >= v;
  }
  return false;
}

}  // namespace fasco
