#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fasco/calibrate.hpp"
#include "helpers.hpp"

using namespace fasco;
using Catch::Matchers::Message;

namespace {

LookupList list_with_rows(std::size_t n, double p) {
  LookupList l;
  l.pair = PairKey::canonical("ta", "ta.k", "tb", "tb.k");
  l.columns = {"ta.k"};
  l.rows.assign(n, 1.0);
  l.inv_sample_rate = p;
  return l;
}

}  // namespace

TEST_CASE("bias factor frozen values", "[calibration]") {
  // 239 qualified rows at rate 1/100 against an estimate of 200
  LookupList l = list_with_rows(239, 100.0);
  CHECK(calibration_factor(l, {}, 200.0) == 80.0);

  // empty sample pulls the estimate toward zero
  LookupList none = list_with_rows(0, 1.0);
  CHECK(none.row_count() == 0);
  CHECK(calibration_factor(none, {}, 9.0) == 0.1);

  // a matching estimate is left alone
  LookupList match = list_with_rows(12, 1.0);
  CHECK(calibration_factor(match, {}, 12.0) == 1.0);
}

TEST_CASE("PairKey canonical order ignores orientation", "[calibration]") {
  PairKey a = PairKey::canonical("ta", "ta.k", "tb", "tb.k");
  PairKey b = PairKey::canonical("tb", "tb.k", "ta", "ta.k");
  CHECK(a == b);
  CHECK(a.key_a <= a.key_b);
  CHECK(a.table_a == "ta");
  CHECK(a.id() == "ta.k|tb.k");
  CHECK(PairKey::of({"tb", "ta", "tb.k", "ta.k"}) == a);
}

TEST_CASE("full join is kept when the budget allows it", "[calibration]") {
  auto tables = helpers::tiny_tables();
  JoinPairDecl decl{"ta", "tb", "ta.k", "tb.k"};
  LookupList l = build_lookup_list(tables, decl, 1 << 20, 7);

  CHECK(l.inv_sample_rate == 1.0);
  CHECK(l.columns == std::vector<std::string>{"ta.k", "ta.v", "tb.k", "tb.w"});
  double want = helpers::naive_join_count(tables, "ta", "ta.k", "tb", "tb.k", {});
  CHECK(want == 4.0);
  CHECK(static_cast<double>(l.row_count()) == want);

  // every retained row really is a joining pair
  for (std::size_t r = 0; r < l.row_count(); ++r) {
    const double* row = l.rows.data() + r * l.columns.size();
    CHECK(row[0] == row[2]);
  }

  // counting with predicates matches the nested-loop reference
  std::vector<Predicate> preds = {{"ta.v", PredOp::LT, 25.0}};
  CHECK(qualified_count(l, preds) ==
        helpers::naive_join_count(tables, "ta", "ta.k", "tb", "tb.k", preds));
  CHECK(qualified_count(l, preds) == 2.0);
}

TEST_CASE("disjoint keys give an empty full-rate list", "[calibration]") {
  auto tables = helpers::tiny_tables();
  tables["tb"].cells[0] = {100, 200, 300, 400};
  LookupList l = build_lookup_list(tables, {"ta", "tb", "ta.k", "tb.k"}, 1 << 20, 7);
  CHECK(l.inv_sample_rate == 1.0);
  CHECK(l.row_count() == 0);
  CHECK(calibration_factor(l, {}, 5.0) == Catch::Approx(1.0 / 6.0));
}

TEST_CASE("build_lookup_list validates its inputs", "[calibration]") {
  auto tables = helpers::tiny_tables();
  CHECK_THROWS_AS(build_lookup_list(tables, {"ta", "tb", "ta.k", "tb.k"}, 0, 1), config_error);
  CHECK_THROWS_AS(build_lookup_list(tables, {"ta", "tb", "tb.k", "ta.k"}, 1 << 20, 1),
                  config_error);
  CHECK_THROWS_AS(build_lookup_list(tables, {"ta", "tb", "ta.nope", "tb.k"}, 1 << 20, 1),
                  config_error);
}

TEST_CASE("sampling rate hits the budget and keeps the expected fraction", "[calibration]") {
  // 5 x 6 all-matching keys: 30 join rows, 5 retained columns, 40 bytes a row.
  // 1200 bytes against a 12 byte budget forces p = 100 exactly.
  TableSet tables;
  TableData ta;
  ta.name = "ta";
  ta.columns = {"k", "a", "b"};
  ta.cells = {{1, 1, 1, 1, 1}, {0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}};
  TableData tb;
  tb.name = "tb";
  tb.columns = {"k", "c"};
  tb.cells = {{1, 1, 1, 1, 1, 1}, {0, 1, 2, 3, 4, 5}};
  tables["ta"] = std::move(ta);
  tables["tb"] = std::move(tb);
  JoinPairDecl decl{"ta", "tb", "ta.k", "tb.k"};

  double kept = 0;
  const int seeds = 400;
  for (int s = 0; s < seeds; ++s) {
    LookupList l = build_lookup_list(tables, decl, 12, static_cast<std::uint64_t>(s));
    CHECK(l.inv_sample_rate == 100.0);
    kept += static_cast<double>(l.row_count());
  }
  // mean kept per build is 30/100; three sigma over 400 seeds is about 0.082
  CHECK(std::abs(kept / seeds - 0.3) < 0.082);
}

TEST_CASE("qualified_count rejects columns the list never kept", "[calibration]") {
  auto tables = helpers::tiny_tables();
  LookupList l = build_lookup_list(tables, {"ta", "tb", "ta.k", "tb.k"}, 1 << 20, 7);
  std::vector<Predicate> preds = {{"tc.z", PredOp::EQ, 1.0}};
  CHECK_THROWS_MATCHES(qualified_count(l, preds), config_error,
                       Message("lookup list for ta.k|tb.k does not retain column 'tc.z'"));
}

TEST_CASE("related nodes cover ancestors, children, and subquery siblings", "[calibration]") {
  using helpers::join;
  using helpers::leaf;
  PlanNode sub = leaf(6, "Index Scan", "tc");
  sub.is_subquery_of_sibling = true;
  PlanTree t;
  t.root = join(7, "Nested Loop",
                join(5, "Hash Join", leaf(1, "Seq Scan", "ta"), leaf(2, "Seq Scan", "tb"),
                     JoinKeys{"ta.k", "tb.k"}),
                std::move(sub));

  CHECK(related_nodes(t, 5) == std::set<int>{1, 2, 5, 6, 7});
  // the subquery leaf itself: parent chain only, sibling 5 is not a subquery
  CHECK(related_nodes(t, 6) == std::set<int>{6, 7});
  CHECK_THROWS_MATCHES(related_nodes(t, 99), config_error,
                       Message("related_nodes: no node with id 99"));
}

TEST_CASE("lowest merge nodes are joins over two leaves", "[calibration]") {
  using helpers::join;
  using helpers::leaf;
  PlanTree t;
  t.root = join(5, "Nested Loop",
                join(4, "Hash Join", leaf(1, "Seq Scan", "ta"), leaf(2, "Seq Scan", "tb")),
                leaf(3, "Seq Scan", "ta"));
  auto lows = find_lowest_merge_nodes(t);
  REQUIRE(lows.size() == 1);
  CHECK(lows[0]->node_id == 4);
}

TEST_CASE("apply_calibration scales the related region and floors at one", "[calibration]") {
  auto tables = helpers::tiny_tables();
  LookupStore store;
  store.put(build_lookup_list(tables, {"ta", "tb", "ta.k", "tb.k"}, 1 << 20, 7));

  using helpers::join;
  using helpers::leaf;
  PlanTree t;
  t.root = join(3, "Hash Join",
                leaf(1, "Seq Scan", "ta", 5.0, {{"ta.v", PredOp::LT, 25.0}}),
                leaf(2, "Seq Scan", "tb", 4.0), JoinKeys{"ta.k", "tb.k"}, 100.0);

  auto [out, report] = apply_calibration(t, store);
  REQUIRE(report.entries.size() == 1);
  CHECK(report.skipped.empty());
  const auto& e = report.entries[0];
  CHECK(e.node_id == 3);
  CHECK(e.qualified == 2.0);
  CHECK(e.vanilla_rows == 100.0);
  const double f = 3.0 / 101.0;
  CHECK(e.factor == Catch::Approx(f));
  CHECK(e.related == std::set<int>{1, 2, 3});

  CHECK(out.root.calibrated_rows == Catch::Approx(100.0 * f));
  CHECK(out.root.children[0].calibrated_rows == 1.0);  // 5 * f floors
  CHECK(out.root.children[1].calibrated_rows == 1.0);  // 4 * f floors
  // the raw estimates never move
  CHECK(out.root.est_rows == 100.0);
  CHECK(out.root.children[0].est_rows == 5.0);
  CHECK(out.root.children[1].est_rows == 4.0);
}

TEST_CASE("factors from separate merges compose on shared ancestors", "[calibration]") {
  auto tables = helpers::tiny_tables();
  LookupStore store;
  store.put(build_lookup_list(tables, {"ta", "tb", "ta.k", "tb.k"}, 1 << 20, 7));

  using helpers::join;
  using helpers::leaf;
  PlanTree t;
  t.root = join(7, "Nested Loop",
                join(5, "Hash Join", leaf(1, "Seq Scan", "ta", 1.0), leaf(2, "Seq Scan", "tb"),
                     JoinKeys{"ta.k", "tb.k"}, 2.0),
                join(6, "Hash Join", leaf(3, "Seq Scan", "ta"), leaf(4, "Seq Scan", "tb"),
                     JoinKeys{"ta.k", "tb.k"}, 8.0),
                std::nullopt, 6.0);

  auto [out, report] = apply_calibration(t, store);
  REQUIRE(report.entries.size() == 2);
  const double f5 = 5.0 / 3.0;  // c = 4, est 2
  const double f6 = 5.0 / 9.0;  // c = 4, est 8
  CHECK(out.root.children[0].calibrated_rows == Catch::Approx(2.0 * f5));
  CHECK(out.root.children[1].calibrated_rows == Catch::Approx(8.0 * f6));
  CHECK(out.root.calibrated_rows == Catch::Approx(6.0 * f5 * f6));
  CHECK(out.root.children[0].children[0].calibrated_rows == Catch::Approx(1.0 * f5));
}

TEST_CASE("merges without a usable list are reported as skipped", "[calibration]") {
  LookupStore store;  // empty
  using helpers::join;
  using helpers::leaf;
  PlanTree keyed;
  keyed.root = join(3, "Hash Join", leaf(1, "Seq Scan", "ta", 5.0), leaf(2, "Seq Scan", "tb", 4.0),
                    JoinKeys{"ta.k", "tb.k"}, 10.0);
  auto [out1, rep1] = apply_calibration(keyed, store);
  CHECK(rep1.entries.empty());
  CHECK(rep1.skipped == std::vector<int>{3});
  CHECK(out1.root.calibrated_rows == 10.0);

  PlanTree keyless;
  keyless.root = join(3, "Nested Loop", leaf(1, "Seq Scan", "ta"), leaf(2, "Seq Scan", "tb"));
  auto [out2, rep2] = apply_calibration(keyless, store);
  CHECK(rep2.entries.empty());
  CHECK(rep2.skipped == std::vector<int>{3});
}

TEST_CASE("a subquery child's keys identify the merge pair", "[calibration]") {
  auto tables = helpers::tiny_tables();
  LookupStore store;
  store.put(build_lookup_list(tables, {"ta", "tb", "ta.k", "tb.k"}, 1 << 20, 7));

  using helpers::join;
  using helpers::leaf;
  PlanNode inner = leaf(2, "Index Scan", "tb", 4.0);
  inner.is_subquery_of_sibling = true;
  inner.join_keys = JoinKeys{"tb.k", "ta.k"};
  PlanTree t;
  t.root = join(3, "Nested Loop", leaf(1, "Seq Scan", "ta", 5.0), std::move(inner),
                std::nullopt, 4.0);

  auto [out, report] = apply_calibration(t, store);
  REQUIRE(report.entries.size() == 1);
  CHECK(report.entries[0].qualified == 4.0);
  CHECK(report.entries[0].factor == 1.0);  // (4 + 1) / (4 + 1)
  CHECK(out.root.calibrated_rows == 4.0);
}

TEST_CASE("rebuild_store is deterministic and bumps versions", "[calibration]") {
  auto tables = helpers::tiny_tables();
  std::vector<JoinPairDecl> pairs = {{"ta", "tb", "ta.k", "tb.k"}};
  LookupStore a;
  rebuild_store(a, tables, pairs, 1 << 20, 42);
  LookupStore b;
  rebuild_store(b, tables, pairs, 1 << 20, 42);

  PairKey key = PairKey::of(pairs[0]);
  auto la = a.find(key);
  auto lb = b.find(key);
  REQUIRE(la);
  REQUIRE(lb);
  CHECK(la->rows == lb->rows);
  CHECK(la->built_at == 1);

  rebuild_store(a, tables, pairs, 1 << 20, 42);
  auto la2 = a.find(key);
  CHECK(la2->built_at == 2);
  CHECK(la2->rows == la->rows);
  // the first snapshot is untouched by the swap
  CHECK(la->built_at == 1);
}

TEST_CASE("LookupStore copies share nothing afterwards", "[calibration]") {
  LookupStore a;
  a.put(list_with_rows(3, 1.0));
  LookupStore b = a;
  CHECK(b.size() == 1);
  LookupList other = list_with_rows(9, 2.0);
  other.pair = PairKey::canonical("tc", "tc.k", "td", "td.k");
  b.put(std::move(other));
  CHECK(b.size() == 2);
  CHECK(a.size() == 1);
  CHECK(a.pairs().size() == 1);
  b = a;
  CHECK(b.size() == 1);
  CHECK(b.find(PairKey::canonical("ta", "ta.k", "tb", "tb.k")) != nullptr);
}
