// klvl command-line interface: single runs, coupled-stability estimates,
// sweep experiments and the invariant-check runner. Every subcommand writes
// config.json, rows.csv, summary.csv and metadata.json into a fresh
// directory under --out; CSV bodies are byte-stable across reruns.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "klvl/klvl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct run_config {
  std::string subcommand;
  std::string optimizer = "svmr";  // sgd | storm | cover | svmr
  std::string problem = "klevel";  // klevel | quintic | quadratic
  int levels = 10;
  long long width = 4;
  long long n = 2000;
  double noise_var = 3.0;
  double split = 0.6;
  double eta = 0.01;
  double beta = 0.1;
  long long iters = 500;
  std::string schedule_from;  // "" | convex | strongly-convex
  bool explicit_schedule = false;
  double lf = 50.0;
  long long batch = 128;
  long long initial_batch = 1;
  int warmup_iters = 5;
  std::vector<std::uint64_t> seeds;
  int seed_count = 1;
  std::uint64_t seed_base = 1;
  int k_min = 1;
  int k_max = 20;
  std::vector<long long> initial_batches = {32, 64, 128, 256, 512};
  double var_min = 0.1;
  double var_max = 3.0;
  double var_step = 0.1;
  int level = 1;
  long long position = 1;
  std::string out_dir = "out";
  std::string tag;
  int jobs = 0;
  int log_every = 1;
  long long max_iters = 0;  // 0 = uncapped
  std::string averaging = "last";
  bool with_bound = false;
  bool optimizer_given = false;

  std::vector<std::uint64_t> effective_seeds() const {
    if (!seeds.empty()) return seeds;
    if (seed_count < 1) throw klvl::config_error("seeds must be nonempty");
    std::vector<std::uint64_t> out;
    for (int i = 0; i < seed_count; ++i)
      out.push_back(seed_base + static_cast<std::uint64_t>(i));
    return out;
  }
};

json config_to_json(const run_config& c) {
  json j;
  j["subcommand"] = c.subcommand;
  j["optimizer"] = c.optimizer;
  j["problem"] = c.problem;
  j["levels"] = c.levels;
  j["width"] = c.width;
  j["n"] = c.n;
  j["noise-var"] = c.noise_var;
  j["split"] = c.split;
  j["eta"] = c.eta;
  j["beta"] = c.beta;
  j["iters"] = c.iters;
  j["schedule"] = c.schedule_from;
  j["explicit-schedule"] = c.explicit_schedule;
  j["lf"] = c.lf;
  j["batch"] = c.batch;
  j["initial-batch"] = c.initial_batch;
  j["warmup-iters"] = c.warmup_iters;
  j["seeds"] = c.seeds;
  j["seed-count"] = c.seed_count;
  j["seed-base"] = c.seed_base;
  j["k-min"] = c.k_min;
  j["k-max"] = c.k_max;
  j["initial-batches"] = c.initial_batches;
  j["var-min"] = c.var_min;
  j["var-max"] = c.var_max;
  j["var-step"] = c.var_step;
  j["level"] = c.level;
  j["position"] = c.position;
  j["out"] = c.out_dir;
  j["tag"] = c.tag;
  j["jobs"] = c.jobs;
  j["log-every"] = c.log_every;
  j["max-iters"] = c.max_iters;
  j["averaging"] = c.averaging;
  j["with-bound"] = c.with_bound;
  return j;
}

// Applies a flat JSON document to the config. `overridden` holds the keys
// already set on the command line, which win. Unknown keys are an error.
void apply_config_file(run_config& c, const json& doc,
                       const std::set<std::string>& overridden) {
  std::map<std::string, std::function<void(const json&)>> setters = {
      {"subcommand", [&](const json& v) { c.subcommand = v.get<std::string>(); }},
      {"optimizer", [&](const json& v) { c.optimizer = v.get<std::string>(); c.optimizer_given = true; }},
      {"problem", [&](const json& v) { c.problem = v.get<std::string>(); }},
      {"levels", [&](const json& v) { c.levels = v.get<int>(); }},
      {"width", [&](const json& v) { c.width = v.get<long long>(); }},
      {"n", [&](const json& v) { c.n = v.get<long long>(); }},
      {"noise-var", [&](const json& v) { c.noise_var = v.get<double>(); }},
      {"split", [&](const json& v) { c.split = v.get<double>(); }},
      {"eta", [&](const json& v) { c.eta = v.get<double>(); c.explicit_schedule = true; }},
      {"beta", [&](const json& v) { c.beta = v.get<double>(); c.explicit_schedule = true; }},
      {"iters", [&](const json& v) { c.iters = v.get<long long>(); c.explicit_schedule = true; }},
      {"schedule", [&](const json& v) { c.schedule_from = v.get<std::string>(); }},
      {"explicit-schedule", [&](const json& v) { c.explicit_schedule = v.get<bool>(); }},
      {"lf", [&](const json& v) { c.lf = v.get<double>(); }},
      {"batch", [&](const json& v) { c.batch = v.get<long long>(); }},
      {"initial-batch", [&](const json& v) { c.initial_batch = v.get<long long>(); }},
      {"warmup-iters", [&](const json& v) { c.warmup_iters = v.get<int>(); }},
      {"seeds", [&](const json& v) { c.seeds = v.get<std::vector<std::uint64_t>>(); }},
      {"seed-count", [&](const json& v) { c.seed_count = v.get<int>(); }},
      {"seed-base", [&](const json& v) { c.seed_base = v.get<std::uint64_t>(); }},
      {"k-min", [&](const json& v) { c.k_min = v.get<int>(); }},
      {"k-max", [&](const json& v) { c.k_max = v.get<int>(); }},
      {"initial-batches", [&](const json& v) { c.initial_batches = v.get<std::vector<long long>>(); }},
      {"var-min", [&](const json& v) { c.var_min = v.get<double>(); }},
      {"var-max", [&](const json& v) { c.var_max = v.get<double>(); }},
      {"var-step", [&](const json& v) { c.var_step = v.get<double>(); }},
      {"level", [&](const json& v) { c.level = v.get<int>(); }},
      {"position", [&](const json& v) { c.position = v.get<long long>(); }},
      {"out", [&](const json& v) { c.out_dir = v.get<std::string>(); }},
      {"tag", [&](const json& v) { c.tag = v.get<std::string>(); }},
      {"jobs", [&](const json& v) { c.jobs = v.get<int>(); }},
      {"log-every", [&](const json& v) { c.log_every = v.get<int>(); }},
      {"max-iters", [&](const json& v) { c.max_iters = v.get<long long>(); }},
      {"averaging", [&](const json& v) { c.averaging = v.get<std::string>(); }},
      {"with-bound", [&](const json& v) { c.with_bound = v.get<bool>(); }},
  };
  std::vector<std::string> unknown;
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!setters.count(it.key())) unknown.push_back(it.key());
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw klvl::config_error(msg);
  }
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!overridden.count(it.key())) setters.at(it.key())(it.value());
}

klvl::optimizer_kind parse_optimizer(const std::string& name) {
  if (name == "sgd") return klvl::optimizer_kind::sgd;
  if (name == "storm") return klvl::optimizer_kind::storm;
  if (name == "cover") return klvl::optimizer_kind::cover;
  if (name == "svmr") return klvl::optimizer_kind::svmr;
  throw klvl::config_error("unknown optimizer: " + name);
}

klvl::generated_problem build_problem(const run_config& c, std::uint64_t seed) {
  if (c.problem == "quintic") {
    klvl::quintic_config q;
    q.n_points = c.n;
    q.noise_var = c.noise_var;
    q.split = c.split;
    return klvl::make_quintic_problem(q, seed);
  }
  if (c.problem == "quadratic")
    return klvl::make_least_squares_problem(c.width, c.n, c.noise_var, seed);
  if (c.problem == "klevel") {
    klvl::klevel_config k;
    k.levels = c.levels;
    k.width = c.width;
    k.n_per_level = c.n;
    k.noise_var = c.noise_var;
    k.split = c.split;
    return klvl::make_klevel_synthetic(k, seed);
  }
  throw klvl::config_error("unknown problem family: " + c.problem);
}

klvl::schedule build_schedule(const run_config& c,
                              const klvl::compositional_problem& p) {
  if (!c.schedule_from.empty() && c.explicit_schedule)
    throw klvl::config_error(
        "conflicting schedule sources: theorem-derived and explicit "
        "eta/beta/iters are mutually exclusive");
  if (!c.schedule_from.empty()) {
    klvl::index_t n_max = 0;
    for (int k = 1; k <= p.num_levels(); ++k)
      n_max = std::max(n_max, p.level(k).sample_count);
    klvl::schedule s;
    if (c.schedule_from == "convex") {
      s = klvl::schedule_convex(n_max);
    } else if (c.schedule_from == "strongly-convex") {
      s = klvl::schedule_strongly_convex(n_max);
      s.mu = p.constants().strong_convexity;
    } else {
      throw klvl::config_error("schedule must be convex or strongly-convex");
    }
    return s;
  }
  klvl::schedule s;
  s.iterations = c.iters;
  s.step_size = c.eta;
  s.momentum = c.beta;
  return s;
}

klvl::run_options build_options(const run_config& c) {
  klvl::run_options opts;
  opts.batch = c.batch;
  opts.initial_batch = c.initial_batch;
  opts.warmup_iters = c.warmup_iters;
  opts.lf_radius = c.lf;
  opts.log_every = c.log_every;
  if (c.max_iters > 0) opts.max_iters = c.max_iters;
  if (c.averaging == "uniform")
    opts.primary = klvl::averaging::uniform();
  else if (c.averaging == "mu_weighted")
    opts.primary = klvl::averaging::mu_weighted(0.0, 0.0);  // filled from schedule
  else if (c.averaging != "last")
    throw klvl::config_error("averaging must be last, uniform or mu_weighted");
  return opts;
}

struct output_paths {
  fs::path dir;
};

output_paths make_output_dir(const run_config& c) {
  std::string leaf = c.subcommand + "-";
  if (!c.tag.empty()) {
    leaf += c.tag;
  } else {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    leaf += std::to_string(
        std::chrono::duration_cast<std::chrono::milliseconds>(now).count());
  }
  output_paths out;
  out.dir = fs::path(c.out_dir) / leaf;
  fs::create_directories(out.dir);
  return out;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw klvl::config_error("cannot open " + path.string());
  f << body;
}

void write_outputs(const run_config& c, const output_paths& paths,
                   const klvl::csv_writer& rows, const klvl::csv_writer& summary,
                   double elapsed_s) {
  write_text(paths.dir / "config.json", config_to_json(c).dump(2) + "\n");
  rows.write((paths.dir / "rows.csv").string());
  summary.write((paths.dir / "summary.csv").string());
  json meta;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  meta["timestamp_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  meta["elapsed_s"] = elapsed_s;
  meta["jobs"] = klvl::resolve_jobs(c.jobs);
  write_text(paths.dir / "metadata.json", meta.dump(2) + "\n");
  std::cout << "wrote " << paths.dir.string() << "\n";
}

klvl::klevel_run_config sweep_run_config(const run_config& c) {
  klvl::klevel_run_config r;
  r.problem.levels = c.levels;
  r.problem.width = c.width;
  r.problem.n_per_level = c.n;
  r.problem.noise_var = c.noise_var;
  r.problem.split = c.split;
  r.eta = c.eta;
  r.beta = c.beta;
  r.batch = c.batch;
  r.iters = c.iters;
  r.lf = c.lf;
  r.initial_batch = c.initial_batch > 1 ? c.initial_batch : c.batch;
  r.log_every = c.log_every > 1 ? c.log_every : 25;
  r.jobs = c.jobs;
  r.with_bound = c.with_bound;
  return r;
}

klvl::csv_writer sweep_rows_csv(const klvl::sweep_result& result) {
  klvl::csv_writer rows({result.axis, "seed", "final_train", "final_test", "gap"});
  for (const auto& cell : result.rows)
    rows.add_row({klvl::format_number(cell.sweep_value),
                  std::to_string(cell.seed),
                  klvl::format_number(cell.final_train),
                  klvl::format_number(cell.final_test),
                  klvl::format_number(cell.gap)});
  return rows;
}

klvl::csv_writer sweep_summary_csv(const klvl::sweep_result& result) {
  klvl::csv_writer summary({result.axis, "seeds", "mean_gap", "stderr_gap",
                            "mean_train", "mean_test", "bound",
                            "bound_violated"});
  for (const auto& s : result.summary)
    summary.add_row({klvl::format_number(s.sweep_value),
                     std::to_string(s.seeds), klvl::format_number(s.mean_gap),
                     klvl::format_number(s.stderr_gap),
                     klvl::format_number(s.mean_train),
                     klvl::format_number(s.mean_test),
                     klvl::format_number(s.bound),
                     std::isnan(s.bound) ? "" : (s.bound_violated ? "1" : "0")});
  return summary;
}

int dispatch(run_config& c) {
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };
  const std::vector<std::uint64_t> seeds = c.effective_seeds();
  output_paths paths = make_output_dir(c);

  if (c.subcommand == "run") {
    const std::uint64_t seed = seeds.front();
    klvl::generated_problem gp = build_problem(c, seed);
    klvl::schedule s = build_schedule(c, gp.problem);
    klvl::run_options opts = build_options(c);
    auto [solution, record] = klvl::run_optimizer(
        parse_optimizer(c.optimizer), gp.problem, gp.train, s, opts, seed);
    klvl::csv_writer rows =
        klvl::run_record_csv(record, gp.problem.num_levels());
    klvl::csv_writer summary({"seed", "iterations", "final_train", "final_test",
                              "gap", "solution_norm", "truncated",
                              "beta_degenerate", "beta_exceeds_theory_cap"});
    const double train = klvl::empirical_value(gp.problem, gp.train, solution);
    const double test = klvl::population_value(gp.problem, solution);
    summary.add_row({std::to_string(seed),
                     std::to_string(record.rows.size()),
                     klvl::format_number(train), klvl::format_number(test),
                     klvl::format_number(test - train),
                     klvl::format_number(solution.norm()),
                     record.truncated ? "1" : "0",
                     record.beta_degenerate ? "1" : "0",
                     record.beta_exceeds_theory_cap ? "1" : "0"});
    write_outputs(c, paths, rows, summary, elapsed());
    return 0;
  }

  if (c.subcommand == "stability") {
    const std::uint64_t seed = seeds.front();
    klvl::generated_problem gp = build_problem(c, seed);
    klvl::stability_config cfg;
    cfg.optimizer = parse_optimizer(c.optimizer);
    cfg.sched = build_schedule(c, gp.problem);
    cfg.options = build_options(c);
    cfg.level = c.level;
    cfg.position = c.position;
    cfg.num_seeds = static_cast<int>(seeds.size());
    cfg.seed_base = seeds.front();
    klvl::stability_estimate est =
        klvl::coupled_stability(gp.problem, gp.train, cfg);
    klvl::csv_writer rows({"seed", "distance"});
    for (std::size_t i = 0; i < est.distances.size(); ++i)
      rows.add_row({std::to_string(seeds.front() + i),
                    klvl::format_number(est.distances[i])});
    klvl::csv_writer summary({"eps_hat", "std_err", "seeds", "level", "position"});
    summary.add_row({klvl::format_number(est.eps_hat),
                     klvl::format_number(est.std_err),
                     std::to_string(est.distances.size()),
                     std::to_string(c.level), std::to_string(c.position)});
    write_outputs(c, paths, rows, summary, elapsed());
    return 0;
  }

  if (c.subcommand == "sweep-levels") {
    klvl::sweep_result result = klvl::experiment_level_sweep(
        c.k_min, c.k_max, sweep_run_config(c), seeds);
    write_outputs(c, paths, sweep_rows_csv(result), sweep_summary_csv(result),
                  elapsed());
    return 0;
  }

  if (c.subcommand == "sweep-initial-batch") {
    std::vector<klvl::index_t> batches(c.initial_batches.begin(),
                                       c.initial_batches.end());
    klvl::sweep_result result =
        klvl::experiment_initial_batch(batches, sweep_run_config(c), seeds);
    write_outputs(c, paths, sweep_rows_csv(result), sweep_summary_csv(result),
                  elapsed());
    return 0;
  }

  if (c.subcommand == "sweep-noise") {
    std::vector<double> vars;
    for (double v = c.var_min; v <= c.var_max + 1e-12; v += c.var_step)
      vars.push_back(v);
    klvl::sweep_result result =
        klvl::experiment_noise_sweep(vars, sweep_run_config(c), seeds);
    write_outputs(c, paths, sweep_rows_csv(result), sweep_summary_csv(result),
                  elapsed());
    return 0;
  }

  if (c.subcommand == "compare-sgd-storm") {
    klvl::sgd_storm_config cfg;
    cfg.quintic.n_points = c.n;
    cfg.quintic.noise_var = c.noise_var;
    cfg.quintic.split = c.split;
    cfg.eta = c.explicit_schedule ? c.eta : 0.001;
    cfg.beta = c.beta;
    cfg.batch = c.batch;
    cfg.iters = c.iters;
    cfg.log_every = c.log_every;
    cfg.jobs = c.jobs;
    klvl::sgd_storm_result result = klvl::experiment_sgd_vs_storm(cfg, seeds);
    klvl::csv_writer rows({"optimizer", "seed", "t", "train_mse", "test_mse"});
    for (const auto& p : result.curves)
      rows.add_row({p.optimizer, std::to_string(p.seed), std::to_string(p.t),
                    klvl::format_number(p.train_loss),
                    klvl::format_number(p.test_loss)});
    klvl::csv_writer summary({"optimizer", "seeds", "mean_final_train",
                              "mean_final_test", "mean_gap", "stderr_gap"});
    for (const auto& s : result.summary)
      summary.add_row({s.optimizer, std::to_string(s.seeds),
                       klvl::format_number(s.mean_final_train),
                       klvl::format_number(s.mean_final_test),
                       klvl::format_number(s.mean_gap),
                       klvl::format_number(s.stderr_gap)});
    write_outputs(c, paths, rows, summary, elapsed());
    return 0;
  }

  if (c.subcommand == "check-invariants") {
    std::vector<klvl::invariant_result> checks = klvl::run_invariant_checks();
    klvl::csv_writer rows({"check", "pass", "detail"});
    int failures = 0;
    for (const auto& r : checks) {
      rows.add_row({r.name, r.pass ? "1" : "0", r.detail});
      if (!r.pass) ++failures;
      std::cout << (r.pass ? "PASS " : "FAIL ") << r.name
                << (r.detail.empty() ? "" : (": " + r.detail)) << "\n";
    }
    klvl::csv_writer summary({"checks", "failures"});
    summary.add_row({std::to_string(checks.size()), std::to_string(failures)});
    write_outputs(c, paths, rows, summary, elapsed());
    return failures == 0 ? 0 : 2;
  }

  throw klvl::config_error("unknown subcommand: " + c.subcommand);
}

}  // namespace

int main(int argc, char** argv) {
  run_config cfg;
  std::string config_file;

  CLI::App app{"K-level variance-reduced optimization laboratory"};
  app.require_subcommand(1);
  app.fallthrough(true);
  app.add_option("--config", config_file, "flat JSON config file");
  app.add_option("--out", cfg.out_dir, "output directory");
  app.add_option("--tag", cfg.tag, "output directory suffix (default: timestamp)");
  app.add_option("--jobs", cfg.jobs, "worker count (0 = logical cores; env KLVL_JOBS overrides)");

  auto add_problem_opts = [&](CLI::App* sub) {
    sub->add_option("--problem", cfg.problem, "klevel | quintic | quadratic");
    sub->add_option("--levels", cfg.levels, "level count K");
    sub->add_option("--width", cfg.width, "intermediate dimension / quadratic dim");
    sub->add_option("--n", cfg.n, "sample count per level (before split)");
    sub->add_option("--noise-var", cfg.noise_var, "per-level Gaussian noise variance");
    sub->add_option("--split", cfg.split, "train fraction");
  };
  auto add_run_opts = [&](CLI::App* sub, bool) {
    sub->add_option("--optimizer", cfg.optimizer, "sgd | storm | cover | svmr")
        ->each([&](const std::string&) { cfg.optimizer_given = true; });
    sub->add_option("--eta", cfg.eta, "step size")
        ->each([&](const std::string&) { cfg.explicit_schedule = true; });
    sub->add_option("--beta", cfg.beta, "momentum")
        ->each([&](const std::string&) { cfg.explicit_schedule = true; });
    sub->add_option("--iters", cfg.iters, "iteration count T")
        ->each([&](const std::string&) { cfg.explicit_schedule = true; });
    sub->add_option("--schedule", cfg.schedule_from,
                    "theorem-derived schedule: convex | strongly-convex");
    sub->add_option("--lf", cfg.lf, "projection radius L_f");
    sub->add_option("--batch", cfg.batch, "minibatch size");
    sub->add_option("--initial-batch", cfg.initial_batch, "estimator init batch");
    sub->add_option("--warmup-iters", cfg.warmup_iters, "warmup iteration count");
    sub->add_option("--log-every", cfg.log_every, "loss sampling cadence");
    sub->add_option("--max-iters", cfg.max_iters, "cap on schedule iterations (0 = none)");
    sub->add_option("--averaging", cfg.averaging, "last | uniform | mu_weighted");
    sub->add_option("--seeds", cfg.seeds, "explicit seed list")->delimiter(',');
    sub->add_option("--seed-count", cfg.seed_count, "number of seeds");
    sub->add_option("--seed-base", cfg.seed_base, "first seed");
  };

  CLI::App* sub_run = app.add_subcommand("run", "single optimizer trajectory");
  add_problem_opts(sub_run);
  add_run_opts(sub_run, true);

  CLI::App* sub_stab = app.add_subcommand("stability", "coupled neighboring-run stability estimate");
  add_problem_opts(sub_stab);
  add_run_opts(sub_stab, true);
  sub_stab->add_option("--level", cfg.level, "replacement level k (1-based)");
  sub_stab->add_option("--position", cfg.position, "replacement position l (1-based)");

  CLI::App* sub_lv = app.add_subcommand("sweep-levels", "generalization gap vs level count (SVMR)");
  add_problem_opts(sub_lv);
  add_run_opts(sub_lv, false);
  sub_lv->add_option("--k-min", cfg.k_min, "smallest K");
  sub_lv->add_option("--k-max", cfg.k_max, "largest K");
  sub_lv->add_flag("--with-bound", cfg.with_bound, "estimate the generalization bound per sweep point");

  CLI::App* sub_ib = app.add_subcommand("sweep-initial-batch", "gap vs estimator-initialization batch (SVMR)");
  add_problem_opts(sub_ib);
  add_run_opts(sub_ib, false);
  sub_ib->add_option("--initial-batches", cfg.initial_batches, "batch grid")->delimiter(',');
  sub_ib->add_flag("--with-bound", cfg.with_bound, "estimate the generalization bound per sweep point");

  CLI::App* sub_nv = app.add_subcommand("sweep-noise", "gap vs noise variance (SVMR)");
  add_problem_opts(sub_nv);
  add_run_opts(sub_nv, false);
  sub_nv->add_option("--var-min", cfg.var_min, "smallest variance");
  sub_nv->add_option("--var-max", cfg.var_max, "largest variance");
  sub_nv->add_option("--var-step", cfg.var_step, "variance step");
  sub_nv->add_flag("--with-bound", cfg.with_bound, "estimate the generalization bound per sweep point");

  CLI::App* sub_cmp = app.add_subcommand("compare-sgd-storm", "quintic SGD vs STORM comparison");
  add_problem_opts(sub_cmp);
  add_run_opts(sub_cmp, false);

  app.add_subcommand("check-invariants", "run the fast property suites of all modules");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    cfg.subcommand = active->get_name();
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw klvl::config_error("cannot open config file " + config_file);
      json doc = json::parse(in);
      std::set<std::string> overridden;
      for (const CLI::Option* opt : active->get_options())
        if (opt->count() > 0 && !opt->get_lnames().empty())
          overridden.insert(opt->get_lnames().front());
      for (const CLI::Option* opt : app.get_options())
        if (opt->count() > 0 && !opt->get_lnames().empty())
          overridden.insert(opt->get_lnames().front());
      overridden.insert("subcommand");
      apply_config_file(cfg, doc, overridden);
    }
    if ((cfg.subcommand == "run" || cfg.subcommand == "stability") &&
        !cfg.optimizer_given)
      throw klvl::config_error("missing required --optimizer");
    if (!cfg.schedule_from.empty() && cfg.explicit_schedule)
      throw klvl::config_error(
          "conflicting schedule sources: theorem-derived and explicit "
          "eta/beta/iters are mutually exclusive");
    return dispatch(cfg);
  } catch (const klvl::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const klvl::invalid_input& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "run error: " << e.what() << "\n";
    return 1;
  }
}
