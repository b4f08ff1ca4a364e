#ifndef KLVL_INVARIANTS_HPP
#define KLVL_INVARIANTS_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "estimators.hpp"
#include "optimizers.hpp"
#include "problem.hpp"
#include "rng.hpp"
#include "stability.hpp"
#include "synthetic.hpp"

namespace klvl {

struct invariant_result {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline generated_problem small_klevel(int levels, index_t d0,
                                      std::uint64_t seed) {
  klevel_config cfg;
  cfg.levels = levels;
  cfg.width = d0;
  cfg.n_per_level = 24;
  cfg.noise_var = 0.5;
  return make_klevel_synthetic(cfg, seed);
}

}  // namespace detail

// Fast property suite shared by the CLI `check-invariants` subcommand. Each
// check is deterministic and runs in well under a second.
inline std::vector<invariant_result> run_invariant_checks() {
  std::vector<invariant_result> results;
  auto check = [&](const std::string& name,
                   const std::function<std::string()>& body) {
    invariant_result r;
    r.name = name;
    try {
      r.detail = body();  // empty detail = pass
      r.pass = r.detail.empty();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    results.push_back(std::move(r));
  };

  check("chain_rule_vs_finite_differences", [] {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const int levels = 1 + static_cast<int>(seed % 4);
      const index_t d0 = 2 + static_cast<index_t>(seed % 3);
      generated_problem gp = detail::small_klevel(levels, d0, seed);
      rng_stream rs(seed, stream::monte_carlo);
      vec x(d0);
      for (index_t i = 0; i < d0; ++i) x(i) = rs.normal();
      const vec g = empirical_gradient(gp.problem, gp.train, x);
      const vec fd = finite_difference_gradient(gp.problem, gp.train, x, 1e-5);
      const double rel = (g - fd).norm() / std::max(g.norm(), 1e-12);
      if (rel > 1e-5)
        return "relative error " + std::to_string(rel) + " at seed " +
               std::to_string(seed);
    }
    return std::string();
  });

  check("dataset_determinism", [] {
    generated_problem a = detail::small_klevel(3, 3, 7);
    generated_problem b = detail::small_klevel(3, 3, 7);
    for (int k = 1; k <= 3; ++k)
      if (a.train.level_payloads(k) != b.train.level_payloads(k))
        return std::string("payload mismatch at level ") + std::to_string(k);
    vec x = vec::Constant(3, 0.3);
    if (empirical_value(a.problem, a.train, x) !=
        empirical_value(b.problem, b.train, x))
      return std::string("empirical values differ for identical seeds");
    return std::string();
  });

  check("neighbor_locality", [] {
    generated_problem gp = detail::small_klevel(3, 3, 11);
    rng_stream rs(99, stream::neighbor_draw);
    dataset nb = neighbor(gp.problem, gp.train, 2, 5, rs);
    for (int k = 1; k <= 3; ++k) {
      for (index_t j = 0; j < gp.train.count(k); ++j) {
        const bool same =
            gp.train.payload(k, j) == nb.payload(k, j);
        const bool should_differ = (k == 2 && j == 4);
        if (same == should_differ)
          return "diff pattern wrong at level " + std::to_string(k) +
                 " position " + std::to_string(j + 1);
      }
    }
    return std::string();
  });

  check("projection_idempotent", [] {
    rng_stream rs(3, stream::monte_carlo);
    for (int rep = 0; rep < 20; ++rep) {
      mat m(3, 4);
      for (index_t i = 0; i < m.size(); ++i)
        m.data()[i] = 5.0 * rs.normal();
      const double radius = 0.5 + 2.0 * rs.uniform01();
      mat p1 = project_ball(m, radius);
      mat p2 = project_ball(p1, radius);
      if (p1 != p2) return std::string("projection not bit-idempotent");
      if (p1.norm() > radius) return std::string("projection above radius");
    }
    return std::string();
  });

  check("beta1_chain_independence", [] {
    generated_problem gp = detail::small_klevel(3, 3, 13);
    vec x0 = vec::Zero(3), x1 = vec::Constant(3, 0.1);
    rng_stream ra(5, stream::init_index);
    rng_stream rb(6, stream::init_index);
    estimator_chain c1 = init_chain(gp.problem, gp.train, x0, 1, 50.0, ra);
    estimator_chain c2 = init_chain(gp.problem, gp.train, x0, 8, 50.0, rb);
    rng_stream d1(42, stream::sample_index);
    rng_stream d2(42, stream::sample_index);
    estimator_chain n1 = svmr_step(c1, x1, x0, gp.problem, gp.train, 4, 1.0, d1);
    estimator_chain n2 = svmr_step(c2, x1, x0, gp.problem, gp.train, 4, 1.0, d2);
    for (int i = 0; i < 3; ++i) {
      if (n1.values[static_cast<std::size_t>(i)] !=
          n2.values[static_cast<std::size_t>(i)])
        return std::string("beta=1 value estimators depend on prior chain");
      if (n1.jacobians[static_cast<std::size_t>(i)] !=
          n2.jacobians[static_cast<std::size_t>(i)])
        return std::string("beta=1 jacobian estimators depend on prior chain");
    }
    return std::string();
  });

  check("averaging_consistency", [] {
    std::vector<vec> iterates;
    rng_stream rs(8, stream::monte_carlo);
    for (int t = 0; t < 7; ++t) {
      vec v(2);
      v << rs.normal(), rs.normal();
      iterates.push_back(v);
    }
    if (average(iterates, averaging::last()) != iterates.back())
      return std::string("last-averaging is not the final iterate");
    if (average(iterates, averaging::uniform()) !=
        average(iterates, averaging::mu_weighted(0.0, 0.3)))
      return std::string("mu_weighted(0) differs from uniform");
    return std::string();
  });

  check("schedule_calculators_exact", [] {
    schedule c = schedule_convex(16);
    if (c.iterations != 1024 || c.step_size != 0.00390625 ||
        c.momentum != 0.00390625)
      return std::string("convex schedule off at n=16");
    schedule sc = schedule_strongly_convex(64);
    if (sc.iterations != 128 || sc.step_size != 0.015625 ||
        sc.momentum != 0.015625)
      return std::string("strongly convex schedule off at n=64");
    return std::string();
  });

  check("bound_evaluator", [] {
    bound_inputs k1;
    k1.lf = 2.0;
    k1.levels = 1;
    k1.eps = {0.5};
    k1.n = {10.0};
    if (theorem1_bound(k1) != 1.0) return std::string("K=1 reduction off");
    bound_inputs k2;
    k2.lf = 1.0;
    k2.levels = 2;
    k2.eps = {0.1, 0.2};
    k2.var = {0.04};
    k2.n = {4.0, 4.0};
    if (std::abs(theorem1_bound(k2) - 0.7) > 1e-15)
      return std::string("K=2 worked value off");
    bound_inputs scaled = k2;
    for (double& e : scaled.eps) e *= 3.0;
    scaled.var = {0.0};
    bound_inputs base = k2;
    base.var = {0.0};
    if (std::abs(theorem1_bound(scaled) - 3.0 * theorem1_bound(base)) > 1e-12)
      return std::string("bound not homogeneous in eps");
    return std::string();
  });

  check("zero_perturbation_stability", [] {
    generated_problem gp = make_least_squares_problem(3, 16, 1.0, 21);
    stability_config cfg;
    cfg.optimizer = optimizer_kind::storm;
    cfg.sched.iterations = 40;
    cfg.sched.step_size = 0.05;
    cfg.sched.momentum = 0.2;
    cfg.options.batch = 1;
    cfg.num_seeds = 2;
    dataset copy = gp.train.with_payload(1, 3, vec(gp.train.payload(1, 2)));
    stability_estimate est =
        coupled_stability_against(gp.problem, gp.train, copy, cfg);
    if (est.eps_hat != 0.0)
      return "identical-payload replacement moved the iterate by " +
             std::to_string(est.eps_hat);
    return std::string();
  });

  check("level_variance_two_pass", [] {
    generated_problem gp = detail::small_klevel(3, 3, 17);
    vec x = vec::Constant(3, 0.2);
    for (int k = 1; k <= 3; ++k) {
      const double got = level_variance_exhaustive(gp.problem, gp.train, x, k);
      // Independent two-pass recomputation.
      empirical_forward fwd =
          empirical_intermediates(gp.problem, gp.train, x, false);
      const vec& point = fwd.means[static_cast<std::size_t>(k - 1)];
      const level_spec& lvl = gp.problem.level(k);
      vec val(lvl.out_dim), mean = vec::Zero(lvl.out_dim);
      for (index_t j = 0; j < gp.train.count(k); ++j) {
        lvl.evaluate(gp.train.payload(k, j), point, val, nullptr);
        mean += val;
      }
      mean /= static_cast<double>(gp.train.count(k));
      double acc = 0.0;
      for (index_t j = 0; j < gp.train.count(k); ++j) {
        lvl.evaluate(gp.train.payload(k, j), point, val, nullptr);
        acc += (val - mean).squaredNorm();
      }
      acc /= static_cast<double>(gp.train.count(k));
      if (std::abs(got - acc) > 1e-12)
        return "exhaustive variance deviates from two-pass oracle at level " +
               std::to_string(k);
    }
    return std::string();
  });

  check("svmr_reduces_to_storm", [] {
    generated_problem gp = make_least_squares_problem(4, 20, 1.0, 23);
    schedule s;
    s.iterations = 50;
    s.step_size = 0.05;
    s.momentum = 0.2;
    run_options opts;
    opts.batch = 1;
    opts.initial_batch = 1;
    opts.log_every = 0;
    opts.log_deviation_norms = false;
    auto storm = run_storm(gp.problem, gp.train, s, opts, 77);
    auto svmr = run_svmr(gp.problem, gp.train, s, opts, 77);
    for (std::size_t t = 0; t < storm.second.rows.size(); ++t) {
      const double dx = std::abs(storm.second.rows[t].x_norm -
                                 svmr.second.rows[t].x_norm);
      if (!(dx <= 1e-12))
        return "trajectories diverge at t=" + std::to_string(t + 1);
    }
    if ((storm.first - svmr.first).norm() > 1e-12)
      return std::string("final solutions differ");
    return std::string();
  });

  check("run_determinism_and_feasibility", [] {
    generated_problem gp = detail::small_klevel(2, 3, 29);
    gp.problem.constants().domain_radius = 1.5;
    schedule s;
    s.iterations = 60;
    s.step_size = 0.05;
    s.momentum = 0.3;
    run_options opts;
    opts.batch = 4;
    opts.initial_batch = 4;
    opts.lf_radius = 50.0;
    opts.log_every = 1;
    auto a = run_svmr(gp.problem, gp.train, s, opts, 5);
    auto b = run_svmr(gp.problem, gp.train, s, opts, 5);
    if ((a.first - b.first).norm() != 0.0)
      return std::string("same-seed runs differ");
    for (std::size_t t = 0; t < a.second.rows.size(); ++t) {
      if (a.second.rows[t].x_norm != b.second.rows[t].x_norm)
        return std::string("trajectories differ across identical runs");
      if (a.second.rows[t].x_norm > 1.5 + 1e-15)
        return std::string("iterate escaped the feasible ball");
    }
    return std::string();
  });

  return results;
}

}  // namespace klvl

#endif  // KLVL_INVARIANTS_HPP
