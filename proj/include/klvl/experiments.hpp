#ifndef KLVL_EXPERIMENTS_HPP
#define KLVL_EXPERIMENTS_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "optimizers.hpp"
#include "parallel.hpp"
#include "problem.hpp"
#include "stability.hpp"
#include "synthetic.hpp"

namespace klvl {

namespace detail {

// Mean (test - train) gap over the sampled rows among the last `tail`
// iterations of a record.
inline double tail_gap(const run_record& record, int tail) {
  double acc = 0.0;
  int count = 0;
  const long long t_final =
      record.rows.empty() ? 0 : record.rows.back().t;
  for (auto it = record.rows.rbegin(); it != record.rows.rend(); ++it) {
    if (t_final - it->t >= tail) break;
    if (!std::isnan(it->train_loss) && !std::isnan(it->test_loss)) {
      acc += it->test_loss - it->train_loss;
      ++count;
    }
  }
  return count > 0 ? acc / count : std::numeric_limits<double>::quiet_NaN();
}

inline std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double se = xs.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
  return {mean, se};
}

}  // namespace detail

// --------------------------------------------------------------------------
// Experiment 1: SGD versus STORM on the quintic regression problem.
// --------------------------------------------------------------------------

struct sgd_storm_config {
  quintic_config quintic;
  double eta = 0.001;
  double beta = 0.05;
  index_t batch = 128;
  long long iters = 500;
  int log_every = 1;
  int jobs = 0;
};

struct curve_point {
  std::string optimizer;
  std::uint64_t seed = 0;
  long long t = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
};

struct optimizer_summary {
  std::string optimizer;
  int seeds = 0;
  double mean_final_train = 0.0;
  double mean_final_test = 0.0;
  double mean_gap = 0.0;
  double stderr_gap = 0.0;
};

struct sgd_storm_result {
  std::vector<curve_point> curves;
  std::vector<optimizer_summary> summary;
};

inline sgd_storm_result experiment_sgd_vs_storm(
    const sgd_storm_config& cfg, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw invalid_input("experiment_sgd_vs_storm: no seeds");
  struct cell_out {
    std::vector<curve_point> curve;
    double final_train = 0.0, final_test = 0.0, gap = 0.0;
  };
  const long long n_cells = static_cast<long long>(seeds.size()) * 2;
  std::vector<cell_out> cells(static_cast<std::size_t>(n_cells));
  parallel_for(cfg.jobs, n_cells, [&](long long i) {
    const bool storm = (i % 2) == 1;
    const std::uint64_t seed = seeds[static_cast<std::size_t>(i / 2)];
    generated_problem gp = make_quintic_problem(cfg.quintic, seed);
    schedule s;
    s.iterations = cfg.iters;
    s.step_size = cfg.eta;
    s.momentum = storm ? cfg.beta : 1.0;
    run_options opts;
    opts.batch = cfg.batch;
    opts.initial_batch = cfg.batch;
    opts.log_every = cfg.log_every;
    opts.log_deviation_norms = false;
    auto [solution, record] =
        storm ? run_storm(gp.problem, gp.train, s, opts, seed)
              : run_sgd(gp.problem, gp.train, s, opts, seed);
    (void)solution;
    cell_out& out = cells[static_cast<std::size_t>(i)];
    const std::string name = storm ? "storm" : "sgd";
    for (const run_row& row : record.rows) {
      if (std::isnan(row.train_loss)) continue;
      out.curve.push_back({name, seed, row.t, row.train_loss, row.test_loss});
    }
    out.final_train = record.rows.back().train_loss;
    out.final_test = record.rows.back().test_loss;
    out.gap = out.final_test - out.final_train;
  });

  sgd_storm_result result;
  for (const auto& c : cells)
    result.curves.insert(result.curves.end(), c.curve.begin(), c.curve.end());
  for (int which = 0; which < 2; ++which) {
    std::vector<double> train, test, gap;
    for (long long i = which; i < n_cells; i += 2) {
      train.push_back(cells[static_cast<std::size_t>(i)].final_train);
      test.push_back(cells[static_cast<std::size_t>(i)].final_test);
      gap.push_back(cells[static_cast<std::size_t>(i)].gap);
    }
    optimizer_summary s;
    s.optimizer = which == 1 ? "storm" : "sgd";
    s.seeds = static_cast<int>(seeds.size());
    s.mean_final_train = detail::mean_stderr(train).first;
    s.mean_final_test = detail::mean_stderr(test).first;
    auto [mg, sg] = detail::mean_stderr(gap);
    s.mean_gap = mg;
    s.stderr_gap = sg;
    result.summary.push_back(std::move(s));
  }
  return result;
}

// --------------------------------------------------------------------------
// K-level sweeps (experiments 2-4) share one cell runner.
// --------------------------------------------------------------------------

struct klevel_run_config {
  klevel_config problem;  // width/dims/n/split/gains; noise and K per sweep
  double eta = 0.01;
  double beta = 0.1;
  index_t batch = 128;
  long long iters = 500;
  double lf = 50.0;
  index_t initial_batch = 128;
  std::optional<index_t> warmup_batch;
  int warmup_iters = 5;
  int log_every = 25;
  int gap_tail = 10;  // gap = mean over the last `gap_tail` iterations
  int jobs = 0;
  bool with_bound = false;      // estimate the generalization bound per point
  int bound_pairs = 3;          // coupled pairs per level for eps estimates
};

struct sweep_cell {
  double sweep_value = 0.0;
  std::uint64_t seed = 0;
  double final_train = 0.0;
  double final_test = 0.0;
  double gap = 0.0;  // tail-mean generalization gap
};

struct sweep_summary {
  double sweep_value = 0.0;
  int seeds = 0;
  double mean_gap = 0.0;
  double stderr_gap = 0.0;
  double mean_train = 0.0;
  double mean_test = 0.0;
  double bound = std::numeric_limits<double>::quiet_NaN();
  bool bound_violated = false;
};

struct sweep_result {
  std::string axis;
  std::vector<sweep_cell> rows;
  std::vector<sweep_summary> summary;
};

namespace detail {

inline sweep_cell run_klevel_cell(double sweep_value, std::uint64_t seed,
                                  const klevel_config& pcfg,
                                  const klevel_run_config& cfg) {
  generated_problem gp = make_klevel_synthetic(pcfg, seed);
  schedule s;
  s.iterations = cfg.iters;
  s.step_size = cfg.eta;
  s.momentum = cfg.beta;
  run_options opts;
  opts.batch = cfg.batch;
  opts.initial_batch = cfg.initial_batch;
  opts.warmup_batch = cfg.warmup_batch;
  opts.warmup_iters = cfg.warmup_iters;
  opts.lf_radius = cfg.lf;
  opts.log_every = cfg.log_every;
  opts.record_tail = cfg.gap_tail;
  opts.log_deviation_norms = false;
  auto [solution, record] = run_svmr(gp.problem, gp.train, s, opts, seed);
  (void)solution;
  sweep_cell cell;
  cell.sweep_value = sweep_value;
  cell.seed = seed;
  cell.final_train = record.rows.back().train_loss;
  cell.final_test = record.rows.back().test_loss;
  cell.gap = tail_gap(record, cfg.gap_tail);
  return cell;
}

// Rough generalization-bound estimate at one sweep point: per-level eps from
// a few coupled pairs (replacement at position 1), per-level variance from
// the exhaustive estimator at the trained solution. The L_f that enters the
// bound is the problem's Lipschitz constant, not the projection radius.
inline std::pair<double, bool> estimate_bound(double measured_gap,
                                              std::uint64_t seed,
                                              const klevel_config& pcfg,
                                              const klevel_run_config& cfg) {
  generated_problem gp = make_klevel_synthetic(pcfg, seed);
  schedule s;
  s.iterations = cfg.iters;
  s.step_size = cfg.eta;
  s.momentum = cfg.beta;
  run_options opts;
  opts.batch = cfg.batch;
  opts.initial_batch = cfg.initial_batch;
  opts.lf_radius = cfg.lf;
  opts.log_every = 0;
  opts.record_tail = 0;
  opts.log_deviation_norms = false;
  auto [solution, record] = run_svmr(gp.problem, gp.train, s, opts, seed);
  (void)record;

  bound_inputs in;
  in.levels = gp.problem.num_levels();
  in.lf = gp.problem.constants().value_lipschitz;
  stability_config scfg;
  scfg.optimizer = optimizer_kind::svmr;
  scfg.sched = s;
  scfg.options = opts;
  scfg.num_seeds = cfg.bound_pairs;
  scfg.seed_base = seed * 1000 + 1;
  for (int k = 1; k <= in.levels; ++k) {
    scfg.level = k;
    scfg.position = 1;
    in.eps.push_back(coupled_stability(gp.problem, gp.train, scfg).eps_hat);
    in.n.push_back(static_cast<double>(gp.train.count(k)));
    if (k < in.levels)
      in.var.push_back(
          level_variance_exhaustive(gp.problem, gp.train, solution, k));
  }
  const double bound = theorem1_bound(in);
  return {bound, measured_gap > bound};
}

inline sweep_result assemble_sweep(
    const std::string& axis, const std::vector<double>& sweep_values,
    const std::vector<std::uint64_t>& seeds, std::vector<sweep_cell> cells,
    const klevel_run_config& cfg,
    const std::function<klevel_config(double)>& problem_at) {
  sweep_result result;
  result.axis = axis;
  result.rows = std::move(cells);
  const std::size_t n_seeds = seeds.size();
  for (std::size_t pi = 0; pi < sweep_values.size(); ++pi) {
    std::vector<double> gaps, trains, tests;
    for (std::size_t si = 0; si < n_seeds; ++si) {
      const sweep_cell& c = result.rows[pi * n_seeds + si];
      gaps.push_back(c.gap);
      trains.push_back(c.final_train);
      tests.push_back(c.final_test);
    }
    sweep_summary s;
    s.sweep_value = sweep_values[pi];
    s.seeds = static_cast<int>(n_seeds);
    auto [mg, sg] = mean_stderr(gaps);
    s.mean_gap = mg;
    s.stderr_gap = sg;
    s.mean_train = mean_stderr(trains).first;
    s.mean_test = mean_stderr(tests).first;
    if (cfg.with_bound) {
      auto [bound, violated] =
          estimate_bound(mg, seeds.front(), problem_at(sweep_values[pi]), cfg);
      s.bound = bound;
      s.bound_violated = violated;
    }
    result.summary.push_back(s);
  }
  return result;
}

inline sweep_result run_sweep(
    const std::string& axis, const std::vector<double>& sweep_values,
    const std::vector<std::uint64_t>& seeds, const klevel_run_config& cfg,
    const std::function<klevel_config(double)>& problem_at,
    const std::function<klevel_run_config(double)>& run_at) {
  if (sweep_values.empty() || seeds.empty())
    throw invalid_input("experiment sweep: empty sweep values or seeds");
  const long long n_cells =
      static_cast<long long>(sweep_values.size() * seeds.size());
  std::vector<sweep_cell> cells(static_cast<std::size_t>(n_cells));
  parallel_for(cfg.jobs, n_cells, [&](long long i) {
    const std::size_t pi = static_cast<std::size_t>(i) / seeds.size();
    const std::size_t si = static_cast<std::size_t>(i) % seeds.size();
    const double value = sweep_values[pi];
    cells[static_cast<std::size_t>(i)] = run_klevel_cell(
        value, seeds[si], problem_at(value), run_at(value));
  });
  return assemble_sweep(axis, sweep_values, seeds, std::move(cells), cfg,
                        problem_at);
}

}  // namespace detail

// Experiment 2: generalization gap versus level count.
inline sweep_result experiment_level_sweep(int k_min, int k_max,
                                           const klevel_run_config& cfg,
                                           const std::vector<std::uint64_t>& seeds) {
  if (k_min < 1 || k_max < k_min)
    throw invalid_input("experiment_level_sweep: bad K range");
  std::vector<double> ks;
  for (int k = k_min; k <= k_max; ++k) ks.push_back(static_cast<double>(k));
  return detail::run_sweep(
      "levels", ks, seeds, cfg,
      [&](double k) {
        klevel_config p = cfg.problem;
        p.levels = static_cast<int>(k);
        p.dims.clear();
        return p;
      },
      [&](double) { return cfg; });
}

// Experiment 3: generalization gap versus the batch size used for the
// estimator initialization and the first few iterations.
inline sweep_result experiment_initial_batch(
    const std::vector<index_t>& batches, const klevel_run_config& cfg,
    const std::vector<std::uint64_t>& seeds) {
  std::vector<double> values;
  for (index_t b : batches) values.push_back(static_cast<double>(b));
  return detail::run_sweep(
      "initial_batch", values, seeds, cfg,
      [&](double) { return cfg.problem; },
      [&](double b) {
        klevel_run_config r = cfg;
        r.initial_batch = static_cast<index_t>(b);
        r.warmup_batch = static_cast<index_t>(b);
        return r;
      });
}

// Experiment 4: generalization gap versus the per-level noise variance.
inline sweep_result experiment_noise_sweep(const std::vector<double>& variances,
                                           const klevel_run_config& cfg,
                                           const std::vector<std::uint64_t>& seeds) {
  return detail::run_sweep(
      "noise_var", variances, seeds, cfg,
      [&](double v) {
        klevel_config p = cfg.problem;
        p.noise_var = v;
        return p;
      },
      [&](double) { return cfg; });
}

}  // namespace klvl

#endif  // KLVL_EXPERIMENTS_HPP
