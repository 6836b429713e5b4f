// Command line front end: synthetic data generation, lookup list builds,
// training, estimation, evaluation, EXPLAIN conversion, and the data-update
// walkthrough (delete + reanalyze + relabel).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fasco/fasco.hpp"

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string plan_file_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "plan_%05d.json", i);
  return buf;
}

void print_summary(std::ostream& os, const std::string& label, const fasco::ErrorSummary& s) {
  os << label << ": mean=" << s.mean << " p50=" << s.p50 << " p90=" << s.p90 << " p95=" << s.p95
     << " p99=" << s.p99 << " max=" << s.max << " (n=" << s.n << ")\n";
}

struct EvalRow {
  double estimated;
  double actual;
  double baseline;
};

// roots only; plans without labels are rejected
std::vector<EvalRow> evaluate_plans(const fasco::ModelParams& model, const fasco::Catalog& catalog,
                                    const fasco::LookupStore* lists,
                                    const std::vector<fasco::PlanTree>& plans,
                                    const fasco::CostOracleParams& oracle) {
  std::vector<EvalRow> rows;
  rows.reserve(plans.size());
  for (const auto& t : plans) {
    if (!t.root.actual_time_ms)
      throw fasco::config_error("plan without an actual runtime cannot be evaluated");
    EvalRow r;
    r.estimated = fasco::estimate(model, t, catalog, lists).root_cost_ms;
    r.actual = std::max(*t.root.actual_time_ms, 1e-3);
    r.baseline = fasco::baseline_cost_ms(catalog, oracle, t);
    rows.push_back(r);
  }
  return rows;
}

int cmd_gen_synth(const std::string& out_dir, fasco::SynthSpec spec, int n_plans,
                  double split_ratio, double noise_sigma, bool verbose) {
  auto t0 = Clock::now();
  auto [catalog, tables] = fasco::gen_catalog(spec);
  fasco::CostOracleParams oracle;
  oracle.noise_sigma = noise_sigma;
  auto plans = fasco::gen_workload(catalog, tables, n_plans, oracle, spec.seed + 1);

  fs::path dir(out_dir);
  fasco::save_catalog(dir / "catalog.bin", catalog);
  fasco::save_tables(dir / "tables.bin", tables);
  int n_train = static_cast<int>(std::llround(split_ratio * n_plans));
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");
  for (int i = 0; i < n_plans; ++i) {
    fs::path sub = i < n_train ? dir / "train" : dir / "test";
    int local = i < n_train ? i : i - n_train;
    fasco::save_plan_file(sub / plan_file_name(local), plans[static_cast<std::size_t>(i)]);
  }
  if (verbose)
    std::cerr << "generated " << tables.size() << " tables, " << n_train << " train + "
              << (n_plans - n_train) << " test plans in " << ms_since(t0) << " ms\n";
  std::cout << "wrote " << out_dir << ": catalog.bin tables.bin train/ (" << n_train
            << ") test/ (" << (n_plans - n_train) << ")\n";
  return 0;
}

int cmd_build_lookups(const std::string& catalog_path, const std::string& tables_path,
                      const std::string& out_dir, std::uint64_t budget, std::uint64_t seed,
                      bool verbose) {
  auto t0 = Clock::now();
  auto catalog = fasco::load_catalog(catalog_path);
  auto tables = fasco::load_tables(tables_path);
  fasco::LookupStore store;
  fasco::rebuild_store(store, tables, catalog.join_pairs, budget, seed);
  fasco::save_lookup_store(out_dir, store);
  if (verbose) std::cerr << "built " << store.size() << " lists in " << ms_since(t0) << " ms\n";
  std::cout << "wrote " << store.size() << " lookup lists to " << out_dir << "\n";
  for (const auto& list : store.all())
    if (verbose)
      std::cerr << "  " << list->pair.id() << ": " << list->row_count()
                << " rows, p=" << list->inv_sample_rate << "\n";
  return 0;
}

int cmd_train(const std::string& plans_dir, const std::string& catalog_path,
              const std::string& lookups_dir, const std::string& out_path,
              fasco::TrainConfig cfg, bool verbose, bool timing) {
  auto t0 = Clock::now();
  auto catalog = fasco::load_catalog(catalog_path);
  auto plans = fasco::load_plan_dir(plans_dir);
  fasco::LookupStore store;
  if (!lookups_dir.empty()) store = fasco::load_lookup_store(lookups_dir);
  auto load_ms = ms_since(t0);

  auto t1 = Clock::now();
  auto result = fasco::train(plans, catalog, lookups_dir.empty() ? nullptr : &store, cfg);
  auto train_ms = ms_since(t1);

  fasco::save_model(out_path, result.params);
  if (verbose) {
    std::cerr << "trained on " << plans.size() << " plans, "
              << result.params.parameter_count() << " parameters\n";
    for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
      std::cerr << "  epoch " << (e + 1) << ": mean loss " << result.epoch_mean_loss[e] << "\n";
  }
  if (timing)
    std::cerr << "load " << load_ms << " ms, train " << train_ms << " ms ("
              << train_ms / static_cast<double>(std::max<std::size_t>(1, plans.size()) *
                                                static_cast<std::size_t>(cfg.epochs))
              << " ms/plan/epoch)\n";
  std::cout << "wrote model to " << out_path << " (final mean loss "
            << result.epoch_mean_loss.back() << ")\n";
  return 0;
}

int cmd_estimate(const std::string& model_path, const std::string& catalog_path,
                 const std::string& lookups_dir, const std::string& plan_path, bool verbose,
                 bool timing) {
  auto model = fasco::load_model(model_path);
  auto catalog = fasco::load_catalog(catalog_path);
  fasco::LookupStore store;
  if (!lookups_dir.empty()) store = fasco::load_lookup_store(lookups_dir);
  auto tree = fasco::load_plan_file(plan_path);
  tree = fasco::merge_unary(std::move(tree));
  if (auto problems = fasco::validate(tree); !problems.empty())
    throw fasco::parse_error(plan_path + ": " + problems.front());

  auto t0 = Clock::now();
  auto result = fasco::estimate(model, tree, catalog, lookups_dir.empty() ? nullptr : &store);
  auto est_ms = ms_since(t0);

  for (const auto& s : result.calibration.skipped)
    std::cerr << "warning: no lookup list for merge node " << s << ", factor stays 1\n";
  if (verbose) {
    for (const auto& [id, cost] : result.node_costs)
      std::cerr << "  node " << id << ": " << cost << " ms\n";
    for (const auto& e : result.calibration.entries)
      std::cerr << "  calibration node " << e.node_id << ": factor " << e.factor << "\n";
  }
  if (timing) std::cerr << "inference " << est_ms << " ms\n";
  std::cout << "estimated root cost: " << result.root_cost_ms << " ms\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& catalog_path,
                 const std::string& lookups_dir, const std::string& plans_dir,
                 const std::string& fit_dir, const std::string& report_path,
                 bool compare_vanilla, double noise_sigma, bool timing) {
  auto model = fasco::load_model(model_path);
  auto catalog = fasco::load_catalog(catalog_path);
  fasco::LookupStore store;
  if (!lookups_dir.empty()) store = fasco::load_lookup_store(lookups_dir);
  auto plans = fasco::load_plan_dir(plans_dir);
  fasco::CostOracleParams oracle;
  oracle.noise_sigma = noise_sigma;
  const fasco::LookupStore* lists = lookups_dir.empty() ? nullptr : &store;

  auto t0 = Clock::now();
  auto rows = evaluate_plans(model, catalog, lists, plans, oracle);
  auto eval_ms = ms_since(t0);

  std::vector<double> model_q;
  model_q.reserve(rows.size());
  for (const auto& r : rows) model_q.push_back(fasco::q_error(r.estimated, r.actual));
  print_summary(std::cout, "model q-error", fasco::summarize(model_q));

  if (compare_vanilla) {
    // the scale is fitted on the training set when one is given
    std::vector<double> scores, labels;
    if (!fit_dir.empty()) {
      for (const auto& t : fasco::load_plan_dir(fit_dir)) {
        if (!t.root.actual_time_ms) continue;
        scores.push_back(fasco::baseline_cost_ms(catalog, oracle, t));
        labels.push_back(std::max(*t.root.actual_time_ms, 1e-3));
      }
    } else {
      std::cerr << "warning: no --fit-plans given, fitting the baseline on the evaluated set\n";
      for (const auto& r : rows) {
        scores.push_back(r.baseline);
        labels.push_back(r.actual);
      }
    }
    double k = fasco::fit_baseline_scale(scores, labels);
    std::vector<double> base_q;
    base_q.reserve(rows.size());
    for (const auto& r : rows) base_q.push_back(fasco::q_error(k * r.baseline, r.actual));
    print_summary(std::cout, "vanilla q-error", fasco::summarize(base_q));
  }
  if (!report_path.empty()) {
    std::ostringstream out;
    for (std::size_t i = 0; i < rows.size(); ++i)
      out << i << " " << rows[i].estimated << " " << rows[i].actual << " " << model_q[i] << "\n";
    std::string text = out.str();
    fasco::detail::atomic_write(report_path,
                                {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
    std::cerr << "wrote " << rows.size() << " residual rows to " << report_path << "\n";
  }
  if (timing)
    std::cerr << "evaluated " << rows.size() << " plans in " << eval_ms << " ms ("
              << eval_ms / static_cast<double>(std::max<std::size_t>(1, rows.size()))
              << " ms/plan)\n";
  return 0;
}

int cmd_adapt_explain(const std::string& in_path, const std::string& out_path) {
  std::string text;
  if (in_path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    text = ss.str();
  } else {
    std::ifstream in(in_path);
    if (!in) throw fasco::io_error("cannot open '" + in_path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  auto tree = fasco::from_explain_text(text);
  tree = fasco::merge_unary(std::move(tree));
  if (auto problems = fasco::validate(tree); !problems.empty())
    std::cerr << "warning: " << problems.front() << "\n";
  if (out_path.empty() || out_path == "-") {
    std::cout << fasco::serialize_plan(tree).dump(2) << "\n";
  } else {
    fasco::save_plan_file(out_path, tree);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_update_data(const std::string& tables_path, double delete_frac, std::uint64_t seed,
                    const std::string& out_tables, const std::string& out_catalog, int buckets,
                    const std::string& old_catalog_path) {
  auto tables = fasco::load_tables(tables_path);
  auto old_catalog = fasco::load_catalog(old_catalog_path);
  auto updated = fasco::delete_rows(tables, delete_frac, seed);
  auto catalog = fasco::reanalyze(updated, old_catalog, buckets);
  fasco::save_tables(out_tables, updated);
  fasco::save_catalog(out_catalog, catalog);
  std::cout << "deleted " << (delete_frac * 100) << "% of rows; wrote " << out_tables << " and "
            << out_catalog << "\n";
  return 0;
}

int cmd_relabel(const std::string& tables_path, const std::string& plans_dir,
                const std::string& out_dir, std::uint64_t seed, double noise_sigma) {
  auto tables = fasco::load_tables(tables_path);
  auto plans = fasco::load_plan_dir(plans_dir);
  fasco::CostOracleParams oracle;
  oracle.noise_sigma = noise_sigma;
  fs::create_directories(out_dir);
  int i = 0;
  for (auto& t : plans) {
    fasco::annotate_actuals(t, tables, oracle, seed + static_cast<std::uint64_t>(i));
    fasco::save_plan_file(fs::path(out_dir) / plan_file_name(i), t);
    ++i;
  }
  std::cout << "relabeled " << plans.size() << " plans into " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned cost estimation for execution plans"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --verbose/--time appear after the subcommand too
  bool verbose = false;
  bool timing = false;
  app.add_flag("--verbose", verbose, "diagnostic detail on stderr");
  app.add_flag("--time", timing, "timing breakdown on stderr");

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic database and workload");
  std::string gen_out = "data";
  fasco::SynthSpec spec;
  int n_plans = 4000;
  double split_ratio = 0.5;
  double gen_sigma = 0.15;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_option("--tables", spec.n_tables, "table count");
  gen->add_option("--rows-min", spec.rows_min, "minimum rows per table");
  gen->add_option("--rows-max", spec.rows_max, "maximum rows per table");
  gen->add_option("--rho", spec.rho, "correlation strength in [0,1]");
  gen->add_option("--plans", n_plans, "total plan count");
  gen->add_option("--split-ratio", split_ratio, "train fraction");
  gen->add_option("--noise-sigma", gen_sigma, "runtime noise");

  // build-lookups
  auto* bl = app.add_subcommand("build-lookups", "build sampled join lookup lists");
  std::string bl_catalog, bl_tables, bl_out = "lookups";
  std::uint64_t bl_budget = 5ull * 1024 * 1024;
  std::uint64_t bl_seed = 1;
  bl->add_option("--catalog", bl_catalog, "catalog file")->required();
  bl->add_option("--tables", bl_tables, "table data file")->required();
  bl->add_option("--out", bl_out, "output directory");
  bl->add_option("--budget-bytes", bl_budget, "per-list byte budget");
  bl->add_option("--seed", bl_seed, "sampling seed");

  // train
  auto* tr = app.add_subcommand("train", "train a cost model");
  std::string tr_plans, tr_catalog, tr_lookups, tr_out = "model.bin";
  fasco::TrainConfig cfg;
  bool no_calibration = false;
  tr->add_option("--plans", tr_plans, "training plan directory")->required();
  tr->add_option("--catalog", tr_catalog, "catalog file")->required();
  tr->add_option("--lookups", tr_lookups, "lookup list directory");
  tr->add_option("--out", tr_out, "model output path");
  tr->add_option("--epochs", cfg.epochs, "training epochs");
  tr->add_option("--lr", cfg.lr, "learning rate");
  tr->add_option("--seed", cfg.seed, "training seed");
  tr->add_option("--lambda-nonindex", cfg.weights.lambda_nonindex, "loss weight, non-index nodes");
  tr->add_option("--lambda-last", cfg.weights.lambda_last, "loss weight, root node");
  tr->add_flag("--no-calibration", no_calibration, "train on raw estimates");

  // estimate
  auto* es = app.add_subcommand("estimate", "estimate one plan's cost");
  std::string es_model, es_catalog, es_lookups, es_plan;
  es->add_option("--model", es_model, "model file")->required();
  es->add_option("--catalog", es_catalog, "catalog file")->required();
  es->add_option("--lookups", es_lookups, "lookup list directory");
  es->add_option("--plan", es_plan, "plan JSON file")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "q-error summary over a plan directory");
  std::string ev_model, ev_catalog, ev_lookups, ev_plans, ev_fit, ev_report;
  bool compare_vanilla = false;
  double ev_sigma = 0.15;
  ev->add_option("--model", ev_model, "model file")->required();
  ev->add_option("--catalog", ev_catalog, "catalog file")->required();
  ev->add_option("--lookups", ev_lookups, "lookup list directory");
  ev->add_option("--plans", ev_plans, "plan directory")->required();
  ev->add_option("--fit-plans", ev_fit, "training plans for fitting the baseline scale");
  ev->add_option("--report", ev_report, "residual report path (id, estimated, actual, q)");
  ev->add_flag("--compare-vanilla", compare_vanilla, "also score a classical cost model");
  ev->add_option("--noise-sigma", ev_sigma, "baseline oracle noise (bookkeeping only)");

  // adapt-explain
  auto* ad = app.add_subcommand("adapt-explain", "convert EXPLAIN (FORMAT JSON) output");
  std::string ad_in, ad_out;
  ad->add_option("--in", ad_in, "EXPLAIN JSON file, or - for stdin")->required();
  ad->add_option("--out", ad_out, "plan JSON output, or - for stdout");

  // update-data
  auto* up = app.add_subcommand("update-data", "delete rows and refresh statistics");
  std::string up_tables, up_out_tables, up_out_catalog, up_old_catalog;
  double delete_frac = 0.3;
  std::uint64_t up_seed = 9;
  int up_buckets = 20;
  up->add_option("--tables", up_tables, "table data file")->required();
  up->add_option("--catalog", up_old_catalog, "current catalog file")->required();
  up->add_option("--delete-frac", delete_frac, "fraction of rows to delete");
  up->add_option("--seed", up_seed, "deletion seed");
  up->add_option("--out-tables", up_out_tables, "updated table data path")->required();
  up->add_option("--out-catalog", up_out_catalog, "updated catalog path")->required();
  up->add_option("--buckets", up_buckets, "histogram buckets");

  // relabel
  auto* rl = app.add_subcommand("relabel", "rerun plans against current data");
  std::string rl_tables, rl_plans, rl_out;
  std::uint64_t rl_seed = 11;
  double rl_sigma = 0.15;
  rl->add_option("--tables", rl_tables, "table data file")->required();
  rl->add_option("--plans", rl_plans, "plan directory")->required();
  rl->add_option("--out", rl_out, "relabeled plan directory")->required();
  rl->add_option("--seed", rl_seed, "noise seed");
  rl->add_option("--noise-sigma", rl_sigma, "runtime noise");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_synth(gen_out, spec, n_plans, split_ratio, gen_sigma, verbose);
    if (bl->parsed()) return cmd_build_lookups(bl_catalog, bl_tables, bl_out, bl_budget, bl_seed, verbose);
    if (tr->parsed()) {
      cfg.calibration_enabled = !no_calibration;
      return cmd_train(tr_plans, tr_catalog, tr_lookups, tr_out, cfg, verbose, timing);
    }
    if (es->parsed()) return cmd_estimate(es_model, es_catalog, es_lookups, es_plan, verbose, timing);
    if (ev->parsed())
      return cmd_evaluate(ev_model, ev_catalog, ev_lookups, ev_plans, ev_fit, ev_report,
                          compare_vanilla, ev_sigma, timing);
    if (ad->parsed()) return cmd_adapt_explain(ad_in, ad_out);
    if (up->parsed())
      return cmd_update_data(up_tables, delete_frac, up_seed, up_out_tables, up_out_catalog,
                             up_buckets, up_old_catalog);
    if (rl->parsed()) return cmd_relabel(rl_tables, rl_plans, rl_out, rl_seed, rl_sigma);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
