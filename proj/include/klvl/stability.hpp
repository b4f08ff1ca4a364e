#ifndef KLVL_STABILITY_HPP
#define KLVL_STABILITY_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "optimizers.hpp"
#include "problem.hpp"
#include "rng.hpp"
#include "synthetic.hpp"

namespace klvl {

// Coupled neighboring-run configuration. Both trajectories of a pair run
// with the same internal seed, hence identical sample-index streams
// (shared-index coupling); only the dataset differs in the one replaced
// sample.
struct stability_config {
  optimizer_kind optimizer = optimizer_kind::storm;
  schedule sched;
  run_options options;
  int level = 1;        // k, 1-based
  index_t position = 1; // l, 1-based
  int num_seeds = 20;
  std::uint64_t seed_base = 1;
  bool shared_index_coupling = true;  // the only supported scheme
};

struct stability_estimate {
  double eps_hat = 0.0;
  double std_err = 0.0;
  std::vector<double> distances;  // per-seed ||x_T - x_T'||
};

namespace detail {

inline stability_estimate aggregate_distances(std::vector<double> distances) {
  stability_estimate est;
  est.distances = std::move(distances);
  const double n = static_cast<double>(est.distances.size());
  double sum = 0.0;
  for (double d : est.distances) sum += d;
  est.eps_hat = sum / n;
  if (est.distances.size() > 1) {
    double ss = 0.0;
    for (double d : est.distances) ss += (d - est.eps_hat) * (d - est.eps_hat);
    est.std_err = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return est;
}

}  // namespace detail

// Coupled run against an explicitly supplied neighboring dataset. Exposed
// so zero-perturbation checks can pass a bit-identical copy.
inline stability_estimate coupled_stability_against(
    const compositional_problem& p, const dataset& data,
    const dataset& data_prime, const stability_config& cfg) {
  if (cfg.num_seeds < 1)
    throw invalid_input("coupled_stability: num_seeds must be >= 1");
  run_options opts = cfg.options;
  opts.log_every = 0;        // trajectories only
  opts.record_tail = 0;
  opts.log_deviation_norms = false;
  std::vector<double> distances(static_cast<std::size_t>(cfg.num_seeds));
  for (int i = 0; i < cfg.num_seeds; ++i) {
    const std::uint64_t run_seed = cfg.seed_base + static_cast<std::uint64_t>(i);
    vec x_t, x_t_prime;
    try {
      x_t = run_optimizer(cfg.optimizer, p, data, cfg.sched, opts, run_seed)
                .second.solutions.at("last");
    } catch (const numeric_error& e) {
      throw numeric_error(std::string("coupled_stability: base trajectory failed (seed ") +
                              std::to_string(run_seed) + "): " + e.what(),
                          e.level, e.iteration);
    }
    try {
      x_t_prime =
          run_optimizer(cfg.optimizer, p, data_prime, cfg.sched, opts, run_seed)
              .second.solutions.at("last");
    } catch (const numeric_error& e) {
      throw numeric_error(std::string("coupled_stability: neighbor trajectory failed (seed ") +
                              std::to_string(run_seed) + "): " + e.what(),
                          e.level, e.iteration);
    }
    distances[static_cast<std::size_t>(i)] = (x_t - x_t_prime).norm();
  }
  return detail::aggregate_distances(std::move(distances));
}

// Uniform-stability estimate: for each seed, replace the (level, position)
// sample by a fresh i.i.d. draw and run the optimizer on both datasets with
// identical internal randomness; eps_hat is the mean final-iterate
// displacement.
inline stability_estimate coupled_stability(const compositional_problem& p,
                                            const dataset& data,
                                            const stability_config& cfg) {
  if (cfg.level < 1 || cfg.level > data.levels() || cfg.position < 1 ||
      cfg.position > data.count(cfg.level))
    throw invalid_input("coupled_stability: (level, position) out of range");
  if (cfg.num_seeds < 1)
    throw invalid_input("coupled_stability: num_seeds must be >= 1");
  run_options opts = cfg.options;
  opts.log_every = 0;
  opts.record_tail = 0;
  opts.log_deviation_norms = false;
  std::vector<double> distances(static_cast<std::size_t>(cfg.num_seeds));
  for (int i = 0; i < cfg.num_seeds; ++i) {
    const std::uint64_t run_seed = cfg.seed_base + static_cast<std::uint64_t>(i);
    rng_stream replacement(run_seed, stream::neighbor_draw,
                           static_cast<std::uint64_t>(cfg.level),
                           static_cast<std::uint64_t>(cfg.position));
    dataset data_prime =
        neighbor(p, data, cfg.level, cfg.position, replacement);
    stability_config one = cfg;
    one.num_seeds = 1;
    one.seed_base = run_seed;
    distances[static_cast<std::size_t>(i)] =
        coupled_stability_against(p, data, data_prime, one).distances[0];
  }
  return detail::aggregate_distances(std::move(distances));
}

// F(A(S)) - F_S(A(S)) with the population surrogate.
inline double generalization_gap(const compositional_problem& p,
                                 const dataset& train, const vec& solution) {
  return population_value(p, solution) - empirical_value(p, train, solution);
}

struct minimizer_result {
  vec x;
  double value = 0.0;
  double grad_norm = 0.0;
  long long iterations = 0;
};

// Long full-batch gradient descent run to ||grad F_S|| <= tol, the
// reference minimizer for optimization-error measurements. Armijo
// backtracking drives the bulk of the descent; once F-value comparisons
// reach the floating-point floor, a gradient-norm-descent phase polishes
// the last few digits (gradient norms do not suffer the cancellation that
// F differences do).
inline minimizer_result empirical_minimizer(const compositional_problem& p,
                                            const dataset& d, const vec& x0,
                                            long long max_iters = 200000,
                                            double tol = 1e-8) {
  vec x = x0.size() > 0 ? x0 : vec(vec::Zero(p.input_dim()));
  double fx = empirical_value(p, d, x);
  double step = 1.0 / std::max(1e-12, p.constants().smoothness);
  minimizer_result out;
  long long used = 0;
  for (long long t = 0; t < max_iters; ++t, ++used) {
    vec g = empirical_gradient(p, d, x);
    const double gn = g.norm();
    if (gn <= tol) {
      out.x = x;
      out.value = fx;
      out.grad_norm = gn;
      out.iterations = used;
      return out;
    }
    double eta = step * 4.0;
    // once the Armijo threshold sinks below the rounding noise of F itself,
    // value comparisons are meaningless; switch to the polish phase
    if (1e-4 * eta * gn * gn <
        64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(fx)))
      break;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      vec cand = x - eta * g;
      if (p.constants().domain_radius)
        cand = project_ball(cand, *p.constants().domain_radius);
      const double fc = empirical_value(p, d, cand);
      if (fc <= fx - 1e-4 * eta * gn * gn) {
        x = std::move(cand);
        fx = fc;
        step = eta;
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) break;
  }
  // Polish: accept steps that shrink the gradient norm.
  double eta = step;
  double gn = empirical_gradient(p, d, x).norm();
  for (long long t = used; t < max_iters && gn > tol && eta > 1e-18; ++t) {
    vec cand = x - eta * empirical_gradient(p, d, x);
    if (p.constants().domain_radius)
      cand = project_ball(cand, *p.constants().domain_radius);
    const double gc = empirical_gradient(p, d, cand).norm();
    if (gc < gn) {
      x = std::move(cand);
      gn = gc;
      eta *= 1.25;
    } else {
      eta *= 0.5;
    }
  }
  if (gn > tol)
    throw oracle_error("empirical_minimizer: reference run did not reach "
                       "gradient tolerance (achieved " + std::to_string(gn) + ")",
                       gn);
  out.x = x;
  out.value = empirical_value(p, d, x);
  out.grad_norm = gn;
  out.iterations = max_iters;
  return out;
}

// F_S(solution) - F_S(x_hat_*^S) against the reference minimizer.
inline double optimization_error(const compositional_problem& p,
                                 const dataset& train, const vec& solution,
                                 long long oracle_iters = 200000) {
  minimizer_result ref = empirical_minimizer(p, train, solution, oracle_iters);
  return empirical_value(p, train, solution) - ref.value;
}

// Monte-Carlo level variance: nested empirical mean up to level k-1, then
// the spread of level-k sample values around their mean over `mc_samples`
// fresh draws from the level's generator.
inline double level_variance(const compositional_problem& p, const dataset& d,
                             const vec& x, int level, index_t mc_samples,
                             rng_stream& rng) {
  if (mc_samples < 1) throw invalid_input("level_variance: mc_samples >= 1");
  if (level < 1 || level > p.num_levels())
    throw invalid_input("level_variance: level out of range");
  empirical_forward fwd = empirical_intermediates(p, d, x, false);
  const vec& point = fwd.means[static_cast<std::size_t>(level - 1)];
  const level_spec& lvl = p.level(level);
  if (!lvl.sample_payload)
    throw config_error("level_variance: level has no payload sampler");
  std::vector<vec> values(static_cast<std::size_t>(mc_samples));
  vec val(lvl.out_dim), mean = vec::Zero(lvl.out_dim);
  for (index_t j = 0; j < mc_samples; ++j) {
    const vec payload = lvl.sample_payload(rng);
    lvl.evaluate(payload, point, val, nullptr);
    values[static_cast<std::size_t>(j)] = val;
    mean += val;
  }
  mean /= static_cast<double>(mc_samples);
  double acc = 0.0;
  for (const vec& v : values) acc += (v - mean).squaredNorm();
  return acc / static_cast<double>(mc_samples);
}

// Exhaustive variant over the dataset's level-k samples (two-pass).
inline double level_variance_exhaustive(const compositional_problem& p,
                                        const dataset& d, const vec& x,
                                        int level) {
  if (level < 1 || level > p.num_levels())
    throw invalid_input("level_variance: level out of range");
  empirical_forward fwd = empirical_intermediates(p, d, x, false);
  const vec& point = fwd.means[static_cast<std::size_t>(level - 1)];
  const level_spec& lvl = p.level(level);
  const index_t n = d.count(level);
  vec val(lvl.out_dim), mean = vec::Zero(lvl.out_dim);
  for (index_t j = 0; j < n; ++j) {
    lvl.evaluate(d.payload(level, j), point, val, nullptr);
    mean += val;
  }
  mean /= static_cast<double>(n);
  double acc = 0.0;
  for (index_t j = 0; j < n; ++j) {
    lvl.evaluate(d.payload(level, j), point, val, nullptr);
    acc += (val - mean).squaredNorm();
  }
  return acc / static_cast<double>(n);
}

// Inputs to the K-level generalization bound.
struct bound_inputs {
  double lf = 1.0;            // L_f
  int levels = 1;             // K
  std::vector<double> eps;    // eps_1 .. eps_K
  std::vector<double> var;    // Var_1 .. Var_{K-1}
  std::vector<double> n;      // n_1 .. n_K
};

// L_f^K eps_K + sum_{k=1}^{K-1} (4 L_f^K eps_k + L_f sqrt(Var_k / n_k)).
inline double theorem1_bound(const bound_inputs& in) {
  if (in.levels < 1) throw invalid_input("theorem1_bound: K must be >= 1");
  if (static_cast<int>(in.eps.size()) != in.levels ||
      static_cast<int>(in.var.size()) != in.levels - 1 ||
      static_cast<int>(in.n.size()) != in.levels)
    throw invalid_input("theorem1_bound: input lengths inconsistent with K");
  for (double e : in.eps)
    if (e < 0.0) throw invalid_input("theorem1_bound: eps must be >= 0");
  for (double v : in.var)
    if (v < 0.0) throw invalid_input("theorem1_bound: var must be >= 0");
  for (double nk : in.n)
    if (!(nk > 0.0)) throw invalid_input("theorem1_bound: n must be > 0");
  double lf_k = 1.0;
  for (int i = 0; i < in.levels; ++i) lf_k *= in.lf;
  double out = lf_k * in.eps[static_cast<std::size_t>(in.levels - 1)];
  for (int k = 1; k <= in.levels - 1; ++k) {
    out += 4.0 * lf_k * in.eps[static_cast<std::size_t>(k - 1)] +
           in.lf * std::sqrt(in.var[static_cast<std::size_t>(k - 1)] /
                             in.n[static_cast<std::size_t>(k - 1)]);
  }
  return out;
}

}  // namespace klvl

#endif  // KLVL_STABILITY_HPP
