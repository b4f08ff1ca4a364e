#include <catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include <Eigen/Dense>

#include "klvl/stability.hpp"
#include "klvl/synthetic.hpp"
#include "test_helpers.hpp"

using namespace klvl;

namespace {

stability_config quick_config(optimizer_kind kind, long long iters = 40) {
  stability_config cfg;
  cfg.optimizer = kind;
  cfg.sched.iterations = iters;
  cfg.sched.step_size = 0.02;
  cfg.sched.momentum = 0.3;
  cfg.options.batch = 2;
  cfg.options.initial_batch = 1;
  cfg.options.lf_radius = 100.0;
  cfg.num_seeds = 3;
  return cfg;
}

}  // namespace

TEST_CASE("identical-payload replacement gives exactly zero stability") {
  generated_problem q = make_least_squares_problem(3, 16, 1.0, 3);
  dataset copy = q.train.with_payload(1, 5, vec(q.train.payload(1, 4)));
  stability_estimate est = coupled_stability_against(
      q.problem, q.train, copy, quick_config(optimizer_kind::storm));
  REQUIRE(est.eps_hat == 0.0);
  for (double d : est.distances) REQUIRE(d == 0.0);

  klevel_config kc;
  kc.levels = 2;
  kc.dims = {3, 3, 1};
  kc.n_per_level = 20;
  kc.noise_var = 1.0;
  generated_problem two = make_klevel_synthetic(kc, 5);
  dataset copy2 = two.train.with_payload(2, 3, vec(two.train.payload(2, 2)));
  REQUIRE(coupled_stability_against(two.problem, two.train, copy2,
                                    quick_config(optimizer_kind::cover))
              .eps_hat == 0.0);

  kc.levels = 3;
  kc.dims = {3, 3, 3, 1};
  generated_problem three = make_klevel_synthetic(kc, 7);
  dataset copy3 = three.train.with_payload(1, 1, vec(three.train.payload(1, 0)));
  REQUIRE(coupled_stability_against(three.problem, three.train, copy3,
                                    quick_config(optimizer_kind::svmr))
              .eps_hat == 0.0);
}

TEST_CASE("zero-noise problems are insensitive to neighbor replacement") {
  klevel_config kc;
  kc.levels = 2;
  kc.dims = {2, 2, 1};
  kc.n_per_level = 12;
  kc.noise_var = 0.0;
  generated_problem gp = make_klevel_synthetic(kc, 9);
  stability_config cfg = quick_config(optimizer_kind::svmr);
  cfg.level = 1;
  cfg.position = 4;
  stability_estimate est = coupled_stability(gp.problem, gp.train, cfg);
  REQUIRE(est.eps_hat == 0.0);
}

TEST_CASE("coupled stability validates its coordinates") {
  generated_problem q = make_least_squares_problem(3, 10, 1.0, 11);
  stability_config cfg = quick_config(optimizer_kind::storm);
  cfg.level = 2;
  REQUIRE_THROWS_AS(coupled_stability(q.problem, q.train, cfg), invalid_input);
  cfg.level = 1;
  cfg.position = 11;
  REQUIRE_THROWS_AS(coupled_stability(q.problem, q.train, cfg), invalid_input);
  cfg.position = 1;
  cfg.num_seeds = 0;
  REQUIRE_THROWS_AS(coupled_stability(q.problem, q.train, cfg), invalid_input);
}

TEST_CASE("coupled trajectories consume identical sample-index streams") {
  generated_problem gp = make_least_squares_problem(2, 12, 1.0, 13);
  auto log_a = std::make_shared<std::vector<klvl_test::eval_call>>();
  auto log_b = std::make_shared<std::vector<klvl_test::eval_call>>();
  compositional_problem pa = klvl_test::instrument(gp.problem, log_a);
  compositional_problem pb = klvl_test::instrument(gp.problem, log_b);
  rng_stream rep(17, stream::neighbor_draw);
  dataset nb = neighbor(gp.problem, gp.train, 1, 6, rep);
  schedule s;
  s.iterations = 25;
  s.step_size = 0.02;
  s.momentum = 0.4;
  run_options opts;
  opts.batch = 3;
  opts.lf_radius = 100.0;
  opts.log_every = 0;
  opts.record_tail = 0;
  run_storm(pa, gp.train, s, opts, 19);
  run_storm(pb, nb, s, opts, 19);
  REQUIRE(log_a->size() == log_b->size());
  const double replaced_old = gp.train.payload(1, 5)(0);
  const double replaced_new = nb.payload(1, 5)(0);
  for (std::size_t i = 0; i < log_a->size(); ++i) {
    const auto& a = (*log_a)[i];
    const auto& b = (*log_b)[i];
    REQUIRE(a.level == b.level);
    if (a.payload0 == b.payload0) continue;
    // the only admissible divergence is the replaced sample
    REQUIRE(a.payload0 == replaced_old);
    REQUIRE(b.payload0 == replaced_new);
  }
}

TEST_CASE("generalization gap is population minus empirical risk") {
  generated_problem gp = make_least_squares_problem(3, 40, 1.0, 21);
  vec x = vec::Constant(3, 0.2);
  REQUIRE(generalization_gap(gp.problem, gp.train, x) ==
          population_value(gp.problem, x) -
              empirical_value(gp.problem, gp.train, x));
}

TEST_CASE("zero-noise problems have zero gap") {
  klevel_config kc;
  kc.levels = 2;
  kc.dims = {2, 2, 1};
  kc.n_per_level = 16;
  kc.noise_var = 0.0;
  generated_problem gp = make_klevel_synthetic(kc, 23);
  vec x = vec::Constant(2, 0.3);
  REQUIRE(std::abs(generalization_gap(gp.problem, gp.train, x)) < 1e-12);
}

TEST_CASE("untrained points sit near zero gap on symmetric noise") {
  double acc = 0.0;
  const int reps = 40;
  for (int r = 0; r < reps; ++r) {
    generated_problem gp =
        make_least_squares_problem(3, 200, 1.0, 1000 + static_cast<std::uint64_t>(r));
    acc += generalization_gap(gp.problem, gp.train, vec(vec::Zero(3)));
  }
  acc /= reps;
  REQUIRE(std::abs(acc) < 0.05);  // Monte-Carlo tolerance
}

TEST_CASE("reference minimizer matches the normal-equations solution") {
  generated_problem gp = make_least_squares_problem(4, 50, 0.5, 25, 2.0);
  mat h = mat::Zero(4, 4);
  vec b = vec::Zero(4);
  for (index_t j = 0; j < 50; ++j) {
    const vec a = gp.train.payload(1, j).head(4);
    h += a * a.transpose();
    b += gp.train.payload(1, j)(4) * a;
  }
  const vec x_star = h.ldlt().solve(b);
  minimizer_result ref =
      empirical_minimizer(gp.problem, gp.train, vec(vec::Zero(4)));
  REQUIRE(ref.grad_norm <= 1e-8);
  REQUIRE((ref.x - x_star).norm() < 1e-8);
}

TEST_CASE("optimization error is zero at the reference and never negative") {
  generated_problem gp = make_least_squares_problem(3, 30, 0.5, 27, 2.0);
  minimizer_result ref =
      empirical_minimizer(gp.problem, gp.train, vec(vec::Zero(3)));
  REQUIRE(std::abs(optimization_error(gp.problem, gp.train, ref.x)) <= 1e-10);
  rng_stream rs(29, stream::monte_carlo);
  for (int r = 0; r < 5; ++r) {
    vec x(3);
    for (index_t i = 0; i < 3; ++i) x(i) = rs.normal();
    REQUIRE(optimization_error(gp.problem, gp.train, x) >= -1e-10);
  }
}

TEST_CASE("oracle failure carries the achieved gradient norm") {
  generated_problem gp = make_least_squares_problem(3, 30, 1.0, 31);
  try {
    empirical_minimizer(gp.problem, gp.train, vec(vec::Zero(3)), 2, 1e-8);
    FAIL("expected oracle_error");
  } catch (const oracle_error& e) {
    REQUIRE(e.achieved > 1e-8);
  }
}

TEST_CASE("level variance vanishes on zero-noise levels") {
  klevel_config kc;
  kc.levels = 3;
  kc.dims = {2, 2, 2, 1};
  kc.n_per_level = 10;
  kc.noise_var = 0.0;
  generated_problem gp = make_klevel_synthetic(kc, 33);
  vec x = vec::Constant(2, 0.4);
  rng_stream rs(35, stream::monte_carlo);
  for (int k = 1; k <= 3; ++k) {
    // identical samples: only mean-rounding residue of order eps^2 remains
    REQUIRE(level_variance_exhaustive(gp.problem, gp.train, x, k) <= 1e-28);
    REQUIRE(level_variance(gp.problem, gp.train, x, k, 50, rs) <= 1e-28);
  }
}

TEST_CASE("level variance recovers additive scalar noise") {
  // additive scalar noise of variance s^2 on a one-dim intermediate level
  klevel_config kc;
  kc.levels = 2;
  kc.dims = {1, 1, 1};
  kc.n_per_level = 10;
  kc.noise_var = 0.49;  // s = 0.7
  generated_problem gp = make_klevel_synthetic(kc, 37);
  vec x = vec::Constant(1, 0.1);
  rng_stream rs(39, stream::monte_carlo);
  const index_t m = 20000;
  const double est = level_variance(gp.problem, gp.train, x, 1, m, rs);
  // Var of the variance estimator of a Gaussian: ~ 2 sigma^4 / m
  const double se = 0.49 * std::sqrt(2.0 / static_cast<double>(m));
  REQUIRE(std::abs(est - 0.49) < 3.0 * se);
}

TEST_CASE("exhaustive level variance equals a direct two-pass computation") {
  klevel_config kc;
  kc.levels = 2;
  kc.dims = {3, 3, 1};
  kc.n_per_level = 25;
  kc.noise_var = 2.0;
  generated_problem gp = make_klevel_synthetic(kc, 41);
  vec x = vec::Constant(3, -0.2);
  for (int k = 1; k <= 2; ++k) {
    const double got = level_variance_exhaustive(gp.problem, gp.train, x, k);
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
    REQUIRE(std::abs(got - acc) <= 1e-12);
  }
}

TEST_CASE("theorem-1 bound evaluator") {
  bound_inputs k1;
  k1.lf = 2.0;
  k1.levels = 1;
  k1.eps = {0.5};
  k1.n = {100.0};
  REQUIRE(theorem1_bound(k1) == 1.0);

  bound_inputs k2;
  k2.lf = 1.0;
  k2.levels = 2;
  k2.eps = {0.1, 0.2};
  k2.var = {0.04};
  k2.n = {4.0, 4.0};
  REQUIRE(theorem1_bound(k2) == Catch::Approx(0.7).margin(1e-15));

  bound_inputs zero;
  zero.lf = 3.0;
  zero.levels = 3;
  zero.eps = {0.0, 0.0, 0.0};
  zero.var = {0.0, 0.0};
  zero.n = {10.0, 10.0, 10.0};
  REQUIRE(theorem1_bound(zero) == 0.0);

  bound_inputs bad = k2;
  bad.eps = {0.1};
  REQUIRE_THROWS_AS(theorem1_bound(bad), invalid_input);
}

TEST_CASE("theorem-1 bound is homogeneous of degree one in eps") {
  rng_stream rs(43, stream::monte_carlo);
  for (int rep = 0; rep < 10; ++rep) {
    bound_inputs in;
    in.levels = 4;
    in.lf = 0.5 + rs.uniform01();
    for (int k = 0; k < 4; ++k) {
      in.eps.push_back(rs.uniform01());
      in.n.push_back(10.0 + 90.0 * rs.uniform01());
    }
    in.var = {0.0, 0.0, 0.0};
    const double c = 0.1 + 5.0 * rs.uniform01();
    bound_inputs scaled = in;
    for (double& e : scaled.eps) e *= c;
    REQUIRE(std::abs(theorem1_bound(scaled) - c * theorem1_bound(in)) <=
            1e-12 * std::max(1.0, theorem1_bound(scaled)));
  }
}

TEST_CASE("stability shrinks as the dataset grows") {
  // mini version of the n-sweep: eps_hat at n = 128 well below n = 16
  auto eps_at = [&](index_t n) {
    generated_problem gp = make_least_squares_problem(3, n, 1.0, 45);
    stability_config cfg = quick_config(optimizer_kind::storm, 64);
    cfg.options.batch = 1;
    cfg.sched.step_size = 0.01;
    cfg.num_seeds = 10;
    return coupled_stability(gp.problem, gp.train, cfg).eps_hat;
  };
  REQUIRE(eps_at(128) < eps_at(16));
}
