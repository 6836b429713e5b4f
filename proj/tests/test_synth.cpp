#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "fasco/synth.hpp"
#include "helpers.hpp"

using namespace fasco;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.n_tables = 3;
  s.rows_min = 50;
  s.rows_max = 120;
  s.rho = 0.6;
  s.seed = 7;
  s.histogram_buckets = 8;
  s.key_domain = 64;
  return s;
}

CostOracleParams quiet_oracle() {
  CostOracleParams o;
  o.noise_sigma = 0.0;
  return o;
}

PlanTree keyed_join_tree() {
  using helpers::join;
  using helpers::leaf;
  PlanTree t;
  t.root = join(3, "Hash Join", leaf(1, "Seq Scan", "ta"), leaf(2, "Seq Scan", "tb"),
                JoinKeys{"ta.k", "tb.k"});
  return t;
}

}  // namespace

TEST_CASE("spec validation", "[synth]") {
  SynthSpec s = small_spec();
  s.rho = 1.5;
  CHECK_THROWS_AS(check_spec(s), config_error);
  s = small_spec();
  s.rows_max = s.rows_min - 1;
  CHECK_THROWS_AS(check_spec(s), config_error);
  s = small_spec();
  s.cols_min = 1;
  CHECK_THROWS_AS(check_spec(s), config_error);
}

TEST_CASE("generated catalogs are deterministic and well formed", "[synth]") {
  SynthSpec spec = small_spec();
  auto [cat1, tab1] = gen_catalog(spec);
  auto [cat2, tab2] = gen_catalog(spec);

  CHECK(cat1.tables == cat2.tables);
  CHECK(cat1.join_pairs == cat2.join_pairs);
  REQUIRE(tab1.size() == 3);
  for (const auto& [name, t] : tab1) {
    const auto& other = tab2.at(name);
    CHECK(t.cells == other.cells);
    CHECK(t.columns[0] == "k");
    CHECK(t.columns.size() >= 2);
    CHECK(t.columns.size() <= 5);
    auto rows = t.rows();
    CHECK(rows >= 50);
    CHECK(rows <= 120);
    CHECK(cat1.tables.at(name) == static_cast<double>(rows));
    for (std::size_t c = 0; c < t.cells.size(); ++c)
      CHECK(cat1.columns.count(t.column_id(c)) == 1);
  }
  // enough edges to connect every table, all on the shared key column
  CHECK(cat1.join_pairs.size() >= 2);
  for (const auto& d : cat1.join_pairs) {
    CHECK(d.key_a == d.table_a + ".k");
    CHECK(d.key_b == d.table_b + ".k");
  }
}

TEST_CASE("exact cardinalities agree with the independent evaluator", "[synth]") {
  auto tables = helpers::tiny_tables();
  using helpers::join;
  using helpers::leaf;

  auto check_against_naive = [&](const PlanNode& n, double expect) {
    double got = exact_cardinality(tables, n);
    CHECK(got == expect);
    CHECK(got == static_cast<double>(helpers::naive_eval(tables, n).rows.size()));
  };

  check_against_naive(leaf(1, "Seq Scan", "ta"), 5.0);
  check_against_naive(leaf(1, "Seq Scan", "ta", 1.0, {{"ta.v", PredOp::GE, 30.0}}), 3.0);
  check_against_naive(keyed_join_tree().root, 4.0);

  PlanNode filtered = keyed_join_tree().root;
  filtered.filters = {{"ta.v", PredOp::LT, 25.0}};
  check_against_naive(filtered, 2.0);

  // subquery leaf carrying the join keys
  PlanNode sub = leaf(2, "Index Scan", "tb");
  sub.is_subquery_of_sibling = true;
  sub.join_keys = JoinKeys{"tb.k", "ta.k"};
  check_against_naive(join(3, "Nested Loop", leaf(1, "Seq Scan", "ta"), sub), 4.0);

  // subquery leaf acting as a pure filter on its sibling
  PlanNode filt = leaf(2, "Subquery Scan", "tb");
  filt.is_subquery_of_sibling = true;
  filt.filters = {{"ta.v", PredOp::LE, 20.0}};
  check_against_naive(join(3, "Nested Loop", leaf(1, "Seq Scan", "ta"), filt), 2.0);
}

TEST_CASE("the evaluator honors its row cap", "[synth]") {
  auto tables = helpers::tiny_tables();
  PlanTree t = keyed_join_tree();
  SubplanEvaluator tight(tables, 2);
  CHECK_THROWS_AS(tight.eval(t.root), cardinality_cap_error);
  SubplanEvaluator loose(tables, 100);
  CHECK(loose.eval(t.root).rows() == 4);
}

TEST_CASE("vanilla estimates follow histograms plus independence", "[synth]") {
  auto catalog = helpers::tiny_catalog();
  using helpers::join;
  using helpers::leaf;

  // ta.k spans [1, 6), tb.k spans [1, 8): the join divides by 7
  CHECK(vanilla_estimate(catalog, keyed_join_tree().root) == Catch::Approx(20.0 / 7.0));

  CHECK(vanilla_estimate(catalog, leaf(1, "Seq Scan", "ta", 1.0,
                                       {{"ta.v", PredOp::LT, 25.0}})) == Catch::Approx(1.5));

  PlanNode sub = leaf(2, "Index Scan", "tb");
  sub.is_subquery_of_sibling = true;
  sub.join_keys = JoinKeys{"tb.k", "ta.k"};
  PlanNode case3 = join(3, "Nested Loop", leaf(1, "Seq Scan", "ta"), std::move(sub));
  CHECK(vanilla_estimate(catalog, case3) == Catch::Approx(20.0 / 7.0));

  PlanNode filt = leaf(2, "Subquery Scan", "tb");
  filt.is_subquery_of_sibling = true;
  filt.filters = {{"ta.v", PredOp::LT, 25.0}};
  PlanNode case2 = join(3, "Nested Loop", leaf(1, "Seq Scan", "ta"), std::move(filt));
  CHECK(vanilla_estimate(catalog, case2) == Catch::Approx(1.5));

  // estimates never fall under one row
  PlanNode tiny = leaf(1, "Seq Scan", "ta", 1.0, {{"ta.v", PredOp::LT, 10.0}});
  CHECK(vanilla_estimate(catalog, tiny) == 1.0);
}

TEST_CASE("annotate_estimates stamps every node", "[synth]") {
  auto catalog = helpers::tiny_catalog();
  PlanTree t = keyed_join_tree();
  annotate_estimates(t, catalog);
  CHECK(t.root.est_rows == Catch::Approx(20.0 / 7.0));
  CHECK(t.root.children[0].est_rows == 5.0);
  CHECK(t.root.children[1].est_rows == 4.0);
  for (const PlanNode* n : post_order(t)) CHECK(n->calibrated_rows == n->est_rows);
}

TEST_CASE("the noiseless cost oracle is exact arithmetic", "[synth]") {
  auto tables = helpers::tiny_tables();
  CostOracleParams o = quiet_oracle();

  PlanTree leaf_only;
  leaf_only.root = helpers::leaf(1, "Seq Scan", "ta");
  annotate_actuals(leaf_only, tables, o, 1);
  CHECK(*leaf_only.root.actual_rows == 5);
  CHECK(*leaf_only.root.actual_time_ms == Catch::Approx(0.002 * 5 + 0.05));

  PlanTree idx;
  idx.root = helpers::leaf(1, "Index Scan", "ta", 1.0, {{"ta.v", PredOp::GE, 30.0}});
  annotate_actuals(idx, tables, o, 1);
  CHECK(*idx.root.actual_rows == 3);
  CHECK(*idx.root.actual_time_ms == Catch::Approx(0.004 * (1 + 3) + 0.05));

  PlanTree join = keyed_join_tree();
  annotate_actuals(join, tables, o, 1);
  CHECK(*join.root.actual_rows == 4);
  CHECK(*join.root.children[0].actual_time_ms == Catch::Approx(0.06));
  CHECK(*join.root.children[1].actual_time_ms == Catch::Approx(0.058));
  // own work: build 4 rows, probe 5, emit 4, plus overhead; time is inclusive
  double own = 0.004 * 4 + 0.0015 * (5 + 4) + 0.05;
  CHECK(*join.root.actual_time_ms == Catch::Approx(own + 0.06 + 0.058));

  PlanNode sub = helpers::leaf(2, "Index Scan", "tb");
  sub.is_subquery_of_sibling = true;
  sub.join_keys = JoinKeys{"tb.k", "ta.k"};
  PlanTree case3;
  case3.root = helpers::join(3, "Nested Loop", helpers::leaf(1, "Seq Scan", "ta"),
                             std::move(sub));
  annotate_actuals(case3, tables, o, 1);
  CHECK(*case3.root.children[1].actual_time_ms == Catch::Approx(0.004 * (5 + 4) + 0.05));
  CHECK(*case3.root.actual_time_ms ==
        Catch::Approx((0.0015 * 4 + 0.05) + 0.06 + (0.004 * 9 + 0.05)));
}

TEST_CASE("oracle noise is seeded and multiplicative", "[synth]") {
  auto tables = helpers::tiny_tables();
  CostOracleParams o;
  o.noise_sigma = 0.15;

  PlanTree a = keyed_join_tree();
  PlanTree b = keyed_join_tree();
  annotate_actuals(a, tables, o, 99);
  annotate_actuals(b, tables, o, 99);
  CHECK(*a.root.actual_time_ms == *b.root.actual_time_ms);

  PlanTree c = keyed_join_tree();
  annotate_actuals(c, tables, o, 100);
  CHECK(*c.root.actual_time_ms != *a.root.actual_time_ms);
  // cardinalities are exact regardless of noise
  CHECK(*c.root.actual_rows == 4);
}

TEST_CASE("the baseline reproduces the oracle when estimates are exact", "[synth]") {
  auto tables = helpers::tiny_tables();
  auto catalog = helpers::tiny_catalog();
  CostOracleParams o = quiet_oracle();

  PlanTree t = keyed_join_tree();
  annotate_actuals(t, tables, o, 1);
  // feed the baseline the true cardinalities
  for (PlanNode* n : post_order(t)) n->est_rows = static_cast<double>(*n->actual_rows);
  CHECK(baseline_cost_ms(catalog, o, t) == Catch::Approx(*t.root.actual_time_ms));

  PlanNode sub = helpers::leaf(2, "Index Scan", "tb");
  sub.is_subquery_of_sibling = true;
  sub.join_keys = JoinKeys{"tb.k", "ta.k"};
  PlanTree case3;
  case3.root = helpers::join(3, "Nested Loop", helpers::leaf(1, "Seq Scan", "ta"),
                             std::move(sub));
  annotate_actuals(case3, tables, o, 1);
  for (PlanNode* n : post_order(case3)) n->est_rows = static_cast<double>(*n->actual_rows);
  CHECK(baseline_cost_ms(catalog, o, case3) == Catch::Approx(*case3.root.actual_time_ms));

  // with wrong cardinalities the baseline must drift
  PlanTree wrong = keyed_join_tree();
  annotate_actuals(wrong, tables, o, 1);
  for (PlanNode* n : post_order(wrong)) n->est_rows = 1000.0;
  CHECK(baseline_cost_ms(catalog, o, wrong) > 2.0 * *wrong.root.actual_time_ms);
}

TEST_CASE("the fitted scale minimizes mean Q-error", "[synth]") {
  std::vector<double> scores = {1.0, 10.0, 100.0};
  std::vector<double> labels = {3.0, 30.0, 300.0};
  CHECK(fit_baseline_scale(scores, labels) == Catch::Approx(3.0));

  std::vector<double> s2 = {2.0, 8.0};
  std::vector<double> l2 = {4.0, 4.0};
  CHECK(fit_baseline_scale(s2, l2) == Catch::Approx(1.0).margin(1e-9));

  CHECK_THROWS_AS(fit_baseline_scale({}, {}), config_error);
  CHECK_THROWS_AS(fit_baseline_scale(scores, l2), config_error);
  std::vector<double> bad = {0.0, 1.0};
  CHECK_THROWS_AS(fit_baseline_scale(bad, l2), config_error);
}

TEST_CASE("row deletion keeps order and hits the exact count", "[synth]") {
  auto tables = helpers::tiny_tables();
  TableSet out = delete_rows(tables, 0.4, 5);
  CHECK(out.at("ta").rows() == 3);  // 5 - round(2.0)
  CHECK(out.at("tb").rows() == 2);  // 4 - round(1.6)

  // survivors keep their original relative order
  const auto& kept = out.at("ta").cells[0];
  const auto& orig = tables.at("ta").cells[0];
  std::size_t pos = 0;
  for (double v : kept) {
    while (pos < orig.size() && orig[pos] != v) ++pos;
    REQUIRE(pos < orig.size());
    ++pos;
  }

  TableSet same = delete_rows(tables, 0.4, 5);
  CHECK(same.at("ta").cells == out.at("ta").cells);

  TableSet all = delete_rows(tables, 0.0, 5);
  CHECK(all.at("ta").cells == tables.at("ta").cells);

  CHECK_THROWS_AS(delete_rows(tables, 1.0, 5), config_error);
  CHECK_THROWS_AS(delete_rows(tables, -0.1, 5), config_error);
}

TEST_CASE("reanalyze refreshes statistics but keeps the join graph", "[synth]") {
  auto tables = helpers::tiny_tables();
  auto catalog = helpers::tiny_catalog();
  TableSet smaller = delete_rows(tables, 0.4, 5);
  Catalog fresh = reanalyze(smaller, catalog, 4);
  CHECK(fresh.join_pairs == catalog.join_pairs);
  CHECK(fresh.table_rows("ta") == 3.0);
  CHECK(fresh.table_rows("tb") == 2.0);
  CHECK(fresh.columns.count("ta.k") == 1);
  CHECK(fresh.columns.count("tb.w") == 1);
}

TEST_CASE("generated workloads are canonical, labeled, and deterministic", "[synth]") {
  SynthSpec spec = small_spec();
  auto [catalog, tables] = gen_catalog(spec);
  CostOracleParams o;

  auto plans = gen_workload(catalog, tables, 25, o, 11);
  REQUIRE(plans.size() == 25);

  std::set<std::size_t> sizes;
  for (const auto& t : plans) {
    CHECK(validate(t).empty());
    CHECK(t.source == PlanSource::Synthetic);
    for (const PlanNode* n : post_order(t)) {
      CHECK(n->children.size() != 1);
      CHECK(n->est_rows >= 1.0);
      REQUIRE(n->actual_time_ms.has_value());
      CHECK(*n->actual_time_ms > 0.0);
      REQUIRE(n->actual_rows.has_value());
    }
    // children precede parents in time: inclusive runtimes never shrink
    for (const PlanNode* n : post_order(t))
      for (const auto& c : n->children)
        CHECK(*n->actual_time_ms >= *c.actual_time_ms);
    sizes.insert(node_count(t));
    PlanTree merged = merge_unary(t);
    CHECK(merged == t);
  }
  CHECK(sizes.size() > 1);  // shapes actually vary

  auto again = gen_workload(catalog, tables, 25, o, 11);
  CHECK(plans == again);

  auto shifted = gen_workload(catalog, tables, 25, o, 12);
  CHECK(plans != shifted);
}
