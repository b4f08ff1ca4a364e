#ifndef KLVL_OPTIMIZERS_HPP
#define KLVL_OPTIMIZERS_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "estimators.hpp"
#include "problem.hpp"
#include "rng.hpp"

namespace klvl {

enum class regime { convex, strongly_convex };

struct schedule {
  long long iterations = 1;  // T
  double step_size = 1.0;    // eta
  double momentum = 1.0;     // beta
  regime kind = regime::convex;
  double mu = 0.0;
  double step_exponent = 0.0;      // a in eta = T^{-a}, when theorem-derived
  double momentum_exponent = 0.0;  // b in beta = T^{-b}

  // eta = 0 is admitted for zero-step degeneracy tests.
  void validate() const {
    if (iterations < 1) throw invalid_input("schedule: T must be >= 1");
    if (!(step_size >= 0.0)) throw invalid_input("schedule: eta must be >= 0");
    if (!(momentum > 0.0 && momentum <= 1.0))
      throw invalid_input("schedule: beta must be in (0, 1]");
    if (kind == regime::convex && mu != 0.0)
      throw invalid_input("schedule: convex regime requires mu = 0");
    if (mu < 0.0) throw invalid_input("schedule: mu must be >= 0");
  }
};

namespace detail {

// t^(num/den) for integer t >= 1. Exact whenever t is a perfect den-th
// power r^den and r^|num| is exactly representable; libm pow alone is off
// by an ulp on cases like 128^(-6/7).
inline double rational_power(long long t, int num, int den) {
  if (t < 1 || den < 1) throw invalid_input("rational_power: bad arguments");
  const long long guess =
      std::llround(std::pow(static_cast<double>(t), 1.0 / den));
  for (long long r = std::max<long long>(1, guess - 1); r <= guess + 1; ++r) {
    long long p = 1;
    bool overflow = false;
    for (int i = 0; i < den; ++i) {
      if (p > std::numeric_limits<long long>::max() / r) {
        overflow = true;
        break;
      }
      p *= r;
    }
    if (!overflow && p == t) {
      double acc = 1.0;
      for (int i = 0; i < std::abs(num); ++i) acc *= static_cast<double>(r);
      return num < 0 ? 1.0 / acc : acc;
    }
  }
  return std::pow(static_cast<double>(t),
                  static_cast<double>(num) / static_cast<double>(den));
}

inline long long rounded_rational_power(index_t n, int num, int den) {
  return std::llround(rational_power(static_cast<long long>(n), num, den));
}

}  // namespace detail

// Convex-regime prescription: T = round(n^{5/2}), eta = beta = T^{-4/5}.
inline schedule schedule_convex(index_t n_max) {
  if (n_max < 1) throw invalid_input("schedule_convex: n must be >= 1");
  schedule s;
  s.iterations = detail::rounded_rational_power(n_max, 5, 2);
  s.step_size = detail::rational_power(s.iterations, -4, 5);
  s.momentum = std::min(1.0, s.step_size);
  s.kind = regime::convex;
  s.mu = 0.0;
  s.step_exponent = 0.8;
  s.momentum_exponent = 0.8;
  return s;
}

// Strongly-convex prescription: T = round(n^{7/6}), eta = beta = T^{-6/7}.
// mu is problem-specific and supplied by the caller afterwards.
inline schedule schedule_strongly_convex(index_t n_max) {
  if (n_max < 1) throw invalid_input("schedule_strongly_convex: n must be >= 1");
  schedule s;
  s.iterations = detail::rounded_rational_power(n_max, 7, 6);
  s.step_size = detail::rational_power(s.iterations, -6, 7);
  s.momentum = std::min(1.0, s.step_size);
  s.kind = regime::strongly_convex;
  s.step_exponent = 6.0 / 7.0;
  s.momentum_exponent = 6.0 / 7.0;
  return s;
}

// Momentum cap of the K-level optimization-error analysis,
// 1 / (8K sum_{i=1..K} (2 L_f^2)^i). Reported as a diagnostic; runs do not
// enforce it (at experiment-scale constants it underflows to ~0).
inline double svmr_theory_momentum_cap(int levels, double lf_radius) {
  double sum = 0.0, term = 1.0;
  for (int i = 1; i <= levels; ++i) {
    term *= 2.0 * lf_radius * lf_radius;
    sum += term;
    if (!std::isfinite(sum)) return 0.0;
  }
  const double cap = 1.0 / (8.0 * static_cast<double>(levels) * sum);
  return std::isfinite(cap) ? cap : 0.0;
}

// --------------------------------------------------------------------------
// Output averaging
// --------------------------------------------------------------------------

struct averaging {
  enum class mode { last, uniform, mu_weighted };
  mode kind = mode::last;
  double mu = 0.0;
  double eta = 0.0;

  static averaging last() { return {mode::last, 0.0, 0.0}; }
  static averaging uniform() { return {mode::uniform, 0.0, 0.0}; }
  static averaging mu_weighted(double mu, double eta) {
    return {mode::mu_weighted, mu, eta};
  }
  std::string name() const {
    switch (kind) {
      case mode::last: return "last";
      case mode::uniform: return "uniform";
      default: return "mu_weighted";
    }
  }
};

// average over x_1..x_T. uniform is the plain mean; mu_weighted uses
// weights (1 - mu*eta/2)^(T-t). mu = 0 makes the weights identically 1, so
// mu_weighted(0, eta) reproduces uniform bit-exactly.
inline vec average(const std::vector<vec>& iterates, const averaging& avg) {
  if (iterates.empty()) throw invalid_input("average: empty iterate list");
  if (avg.kind == averaging::mode::last) return iterates.back();
  double base = 1.0;
  if (avg.kind == averaging::mode::mu_weighted) {
    if (avg.mu < 0.0 || avg.eta < 0.0 || avg.mu * avg.eta >= 2.0)
      throw invalid_input("average: mu_weighted needs mu, eta >= 0 and mu*eta < 2");
    base = 1.0 - 0.5 * avg.mu * avg.eta;
  }
  const long long t_final = static_cast<long long>(iterates.size());
  vec acc = vec::Zero(iterates.front().size());
  double weight_sum = 0.0;
  for (long long t = 1; t <= t_final; ++t) {
    const double w = std::pow(base, static_cast<double>(t_final - t));
    acc += w * iterates[static_cast<std::size_t>(t - 1)];
    weight_sum += w;
  }
  return acc / weight_sum;
}

// --------------------------------------------------------------------------
// Run records
// --------------------------------------------------------------------------

struct run_row {
  long long t = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double x_norm = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> var_u;  // ||u^(i) - f_{i,S}(u^(i-1))||, NaN = unsampled
  std::vector<double> var_v;  // ||v^(i) - grad f_{i,S}(u^(i-1))||_F
};

struct run_record {
  std::vector<run_row> rows;  // t = 1..T
  run_row initial;            // t = 0
  std::uint64_t seed = 0;
  long long requested_iterations = 0;  // schedule T before any cap
  bool truncated = false;
  bool beta_degenerate = false;        // beta == 1 (degeneracy tests only)
  bool beta_exceeds_theory_cap = false;
  std::map<std::string, vec> solutions;
};

struct run_options {
  index_t batch = 1;
  index_t initial_batch = 1;
  std::optional<index_t> warmup_batch;  // batch for the first warmup_iters steps
  int warmup_iters = 5;
  std::optional<double> lf_radius;      // default: problem constants L_f
  long long max_iters = std::numeric_limits<long long>::max();
  int log_every = 1;   // loss/deviation sampling cadence; 0 = tail only
  int record_tail = 10;
  bool log_deviation_norms = true;
  averaging primary = averaging::last();
  vec x0;  // empty = zeros
  std::function<void(long long t, const vec& x, const estimator_chain* chain)>
      on_step;
};

namespace detail {

struct run_context {
  const compositional_problem& p;
  const dataset& d;
  const schedule& sched;
  const run_options& opts;
  run_record record;
  long long t_cap = 0;
  double lf = 1.0;
  bool has_test = false;
  std::vector<vec> iterates;

  run_context(const compositional_problem& problem, const dataset& data,
              const schedule& s, const run_options& o, std::uint64_t seed)
      : p(problem), d(data), sched(s), opts(o) {
    s.validate();
    if (o.batch < 1) throw invalid_input("run: batch must be >= 1");
    for (int k = 1; k <= problem.num_levels(); ++k) {
      if (o.batch > data.count(k))
        throw invalid_input("run: batch exceeds sample count of level " +
                            std::to_string(k));
      if (o.warmup_batch && *o.warmup_batch > data.count(k))
        throw invalid_input("run: warmup batch exceeds sample count of level " +
                            std::to_string(k));
    }
    record.seed = seed;
    record.requested_iterations = s.iterations;
    t_cap = std::min(s.iterations, o.max_iters);
    record.truncated = t_cap < s.iterations;
    record.beta_degenerate = s.momentum == 1.0;
    lf = o.lf_radius.value_or(problem.constants().value_lipschitz);
    has_test = static_cast<bool>(problem.population_oracle()) ||
               problem.test_data().has_value();
    record.rows.resize(static_cast<std::size_t>(t_cap));
    iterates.reserve(static_cast<std::size_t>(t_cap));
  }

  vec start_point() const {
    if (opts.x0.size() > 0) {
      if (opts.x0.size() != p.input_dim())
        throw invalid_input("run: x0 dimension mismatch");
      return opts.x0;
    }
    return vec::Zero(p.input_dim());
  }

  bool sampled(long long t) const {
    if (t == 0 || t == t_cap || t > t_cap - opts.record_tail) return true;
    if (opts.log_every <= 0) return false;
    return t % opts.log_every == 0;
  }

  void log_losses(run_row& row, const vec& x) const {
    row.train_loss = empirical_value(p, d, x);
    if (has_test) row.test_loss = population_value(p, x);
  }

  void record_step(long long t, const vec& x,
                   const std::function<void(run_row&)>& deviations) {
    run_row& row = t == 0 ? record.initial
                          : record.rows[static_cast<std::size_t>(t - 1)];
    row.t = t;
    row.x_norm = x.norm();
    if (sampled(t)) {
      log_losses(row, x);
      if (opts.log_deviation_norms && deviations) deviations(row);
    }
    if (!x.allFinite())
      throw numeric_error("run: non-finite iterate at iteration " +
                          std::to_string(t), 0, t);
  }

  void apply_domain(vec& x) const {
    if (p.constants().domain_radius)
      x = project_ball(x, *p.constants().domain_radius);
  }

  index_t step_batch(long long t) const {
    if (opts.warmup_batch && t < opts.warmup_iters) return *opts.warmup_batch;
    return opts.batch;
  }

  std::pair<vec, run_record> finish(const vec& x_final) {
    record.solutions["last"] = iterates.empty() ? x_final : iterates.back();
    if (!iterates.empty()) {
      record.solutions["uniform"] = average(iterates, averaging::uniform());
      const double mu =
          sched.mu > 0.0 ? sched.mu : p.constants().strong_convexity;
      if (sched.kind == regime::strongly_convex && mu > 0.0)
        record.solutions["mu_weighted"] =
            average(iterates, averaging::mu_weighted(mu, sched.step_size));
    }
    averaging primary = opts.primary;
    if (primary.kind == averaging::mode::mu_weighted && primary.mu == 0.0)
      primary = averaging::mu_weighted(sched.mu > 0.0
                                           ? sched.mu
                                           : p.constants().strong_convexity,
                                       sched.step_size);
    vec solution =
        iterates.empty() ? x_final : average(iterates, primary);
    return {std::move(solution), std::move(record)};
  }
};

inline void full_mean_at(const compositional_problem& p, const dataset& d,
                         int k, const vec& point, vec& value, mat& jac) {
  level_full_mean(p, d, k, point, value, &jac);
}

}  // namespace detail

// --------------------------------------------------------------------------
// SGD baseline. At K = 1 this is plain minibatch SGD; at K > 1 each level
// plugs in a fresh minibatch mean per step (nested plug-in estimate, biased
// by construction).
// --------------------------------------------------------------------------
inline std::pair<vec, run_record> run_sgd(const compositional_problem& p,
                                          const dataset& d, const schedule& s,
                                          const run_options& opts,
                                          std::uint64_t seed) {
  detail::run_context ctx(p, d, s, opts, seed);
  rng_stream draw(seed, stream::sample_index);
  vec x = ctx.start_point();
  ctx.record_step(0, x, nullptr);

  const int k_levels = p.num_levels();
  std::vector<index_t> idx;
  std::vector<vec> points(static_cast<std::size_t>(k_levels) + 1);
  vec vtmp, mean_val;
  mat jtmp;
  std::vector<mat> jac(static_cast<std::size_t>(k_levels));
  for (long long t = 0; t < ctx.t_cap; ++t) {
    const index_t b = ctx.step_batch(t);
    points[0] = x;
    for (int k = 1; k <= k_levels; ++k) {
      detail::draw_batch(draw, d.count(k), b, idx);
      level_batch_mean(p, d, k, idx, points[static_cast<std::size_t>(k - 1)],
                       mean_val, &jac[static_cast<std::size_t>(k - 1)], vtmp,
                       jtmp);
      points[static_cast<std::size_t>(k)] = mean_val;
    }
    mat prod = jac.back();
    for (int i = k_levels - 2; i >= 0; --i)
      prod = prod * jac[static_cast<std::size_t>(i)];
    x -= s.step_size * prod.transpose().col(0);
    ctx.apply_domain(x);
    ctx.iterates.push_back(x);
    if (opts.on_step) opts.on_step(t + 1, x, nullptr);
    ctx.record_step(t + 1, x, nullptr);
  }
  return ctx.finish(x);
}

// --------------------------------------------------------------------------
// STORM (one level): x_{t+1} = x_t - eta v_t, then the recursive-momentum
// v-update with one minibatch evaluated at both the new and old iterate.
// --------------------------------------------------------------------------
inline std::pair<vec, run_record> run_storm(const compositional_problem& p,
                                            const dataset& d,
                                            const schedule& s,
                                            const run_options& opts,
                                            std::uint64_t seed) {
  if (p.num_levels() != 1) throw invalid_input("run_storm: requires K = 1");
  detail::run_context ctx(p, d, s, opts, seed);
  rng_stream init(seed, stream::init_index);
  rng_stream draw(seed, stream::sample_index);

  vec x = ctx.start_point();
  estimator_chain chain =
      init_chain(p, d, x, opts.initial_batch, ctx.lf, init);
  mat v = chain.jacobians[0];

  auto deviations = [&](run_row& row, const vec& at) {
    vec mval;
    mat mjac;
    detail::full_mean_at(p, d, 1, at, mval, mjac);
    row.var_v.assign(1, (v - mjac).norm());
    row.var_u.assign(1, std::numeric_limits<double>::quiet_NaN());
  };
  ctx.record_step(0, x, [&](run_row& row) { deviations(row, x); });

  std::vector<index_t> idx;
  vec vtmp, val_new, val_old;
  mat jtmp, jac_new, jac_old;
  for (long long t = 0; t < ctx.t_cap; ++t) {
    vec x_new = x - s.step_size * v.transpose().col(0);
    ctx.apply_domain(x_new);
    detail::draw_batch(draw, d.count(1), ctx.step_batch(t), idx);
    level_batch_mean(p, d, 1, idx, x_new, val_new, &jac_new, vtmp, jtmp);
    level_batch_mean(p, d, 1, idx, x, val_old, &jac_old, vtmp, jtmp);
    v = storm_update(v, jac_new, jac_old, s.momentum, ctx.lf);
    x = std::move(x_new);
    ctx.iterates.push_back(x);
    if (opts.on_step) {
      estimator_chain view;
      view.values = {val_new};
      view.jacobians = {v};
      view.radius = ctx.lf;
      opts.on_step(t + 1, x, &view);
    }
    ctx.record_step(t + 1, x, [&](run_row& row) { deviations(row, x); });
  }
  return ctx.finish(x);
}

// --------------------------------------------------------------------------
// COVER (two levels): inner value and Jacobian estimators plus a fresh
// outer-gradient minibatch each step.
// --------------------------------------------------------------------------
inline std::pair<vec, run_record> run_cover(const compositional_problem& p,
                                            const dataset& d,
                                            const schedule& s,
                                            const run_options& opts,
                                            std::uint64_t seed) {
  if (p.num_levels() != 2) throw invalid_input("run_cover: requires K = 2");
  detail::run_context ctx(p, d, s, opts, seed);
  rng_stream init(seed, stream::init_index);
  rng_stream draw(seed, stream::sample_index);

  vec x = ctx.start_point();
  std::vector<index_t> idx;
  vec vtmp, uval, val_new, val_old;
  mat jtmp, jac, jac_new, jac_old;

  // u_0, v_0 from an inner minibatch at x_0; fresh outer gradient at u_0.
  detail::draw_batch(init, d.count(1), opts.initial_batch, idx);
  level_batch_mean(p, d, 1, idx, x, uval, &jac, vtmp, jtmp);
  vec u = uval;
  mat v = project_ball(jac, ctx.lf);
  detail::draw_batch(init, d.count(2), opts.initial_batch, idx);
  level_batch_mean(p, d, 2, idx, u, uval, &jac, vtmp, jtmp);
  mat outer_grad = jac;  // 1 x d1, unprojected

  auto deviations = [&](run_row& row, const vec& at) {
    vec mval;
    mat mjac;
    detail::full_mean_at(p, d, 1, at, mval, mjac);
    row.var_u.assign(2, std::numeric_limits<double>::quiet_NaN());
    row.var_v.assign(2, std::numeric_limits<double>::quiet_NaN());
    row.var_u[0] = (u - mval).norm();
    row.var_v[0] = (v - mjac).norm();
  };
  ctx.record_step(0, x, [&](run_row& row) { deviations(row, x); });

  for (long long t = 0; t < ctx.t_cap; ++t) {
    vec x_new = x - s.step_size * (outer_grad * v).transpose().col(0);
    ctx.apply_domain(x_new);
    const index_t b = ctx.step_batch(t);
    // Inner value pair (one minibatch for both evaluation points).
    detail::draw_batch(draw, d.count(1), b, idx);
    level_batch_mean(p, d, 1, idx, x_new, val_new, nullptr, vtmp, jtmp);
    level_batch_mean(p, d, 1, idx, x, val_old, nullptr, vtmp, jtmp);
    // Inner Jacobian pair (a second, independent minibatch).
    detail::draw_batch(draw, d.count(1), b, idx);
    level_batch_mean(p, d, 1, idx, x_new, uval, &jac_new, vtmp, jtmp);
    level_batch_mean(p, d, 1, idx, x, uval, &jac_old, vtmp, jtmp);
    auto [u_next, v_next] =
        cover_update(u, v, val_new, val_old, jac_new, jac_old, s.momentum,
                     ctx.lf);
    u = std::move(u_next);
    v = std::move(v_next);
    // Fresh outer gradient at the new inner-value estimate.
    detail::draw_batch(draw, d.count(2), b, idx);
    level_batch_mean(p, d, 2, idx, u, uval, &outer_grad, vtmp, jtmp);
    x = std::move(x_new);
    ctx.iterates.push_back(x);
    if (opts.on_step) {
      estimator_chain view;
      view.values = {u};
      view.jacobians = {v};
      view.radius = ctx.lf;
      opts.on_step(t + 1, x, &view);
    }
    ctx.record_step(t + 1, x, [&](run_row& row) { deviations(row, x); });
  }
  return ctx.finish(x);
}

// --------------------------------------------------------------------------
// SVMR (any K): per-level value and projected Jacobian estimators; the
// iterate moves along the transpose-chained Jacobian product.
// --------------------------------------------------------------------------
inline std::pair<vec, run_record> run_svmr(const compositional_problem& p,
                                           const dataset& d, const schedule& s,
                                           const run_options& opts,
                                           std::uint64_t seed) {
  detail::run_context ctx(p, d, s, opts, seed);
  if (opts.initial_batch < 1)
    throw invalid_input("run_svmr: initial_batch must be >= 1");
  ctx.record.beta_exceeds_theory_cap =
      s.momentum > svmr_theory_momentum_cap(p.num_levels(), ctx.lf);
  rng_stream init(seed, stream::init_index);
  rng_stream draw(seed, stream::sample_index);

  vec x = ctx.start_point();
  estimator_chain chain =
      init_chain(p, d, x, opts.initial_batch, ctx.lf, init);

  auto deviations = [&](run_row& row, const vec& at) {
    row.var_u.assign(static_cast<std::size_t>(p.num_levels()),
                     std::numeric_limits<double>::quiet_NaN());
    row.var_v.assign(static_cast<std::size_t>(p.num_levels()),
                     std::numeric_limits<double>::quiet_NaN());
    const vec* point = &at;
    vec mval;
    mat mjac;
    for (int i = 1; i <= p.num_levels(); ++i) {
      detail::full_mean_at(p, d, i, *point, mval, mjac);
      row.var_u[static_cast<std::size_t>(i - 1)] =
          (chain.values[static_cast<std::size_t>(i - 1)] - mval).norm();
      row.var_v[static_cast<std::size_t>(i - 1)] =
          (chain.jacobians[static_cast<std::size_t>(i - 1)] - mjac).norm();
      point = &chain.values[static_cast<std::size_t>(i - 1)];
    }
  };
  ctx.record_step(0, x, [&](run_row& row) { deviations(row, x); });

  for (long long t = 0; t < ctx.t_cap; ++t) {
    vec x_new = x - s.step_size * chained_gradient(chain);
    ctx.apply_domain(x_new);
    chain = svmr_step(chain, x_new, x, p, d, ctx.step_batch(t), s.momentum,
                      draw);
    x = std::move(x_new);
    ctx.iterates.push_back(x);
    if (opts.on_step) opts.on_step(t + 1, x, &chain);
    ctx.record_step(t + 1, x, [&](run_row& row) { deviations(row, x); });
  }
  return ctx.finish(x);
}

enum class optimizer_kind { sgd, storm, cover, svmr };

inline std::pair<vec, run_record> run_optimizer(
    optimizer_kind kind, const compositional_problem& p, const dataset& d,
    const schedule& s, const run_options& opts, std::uint64_t seed) {
  switch (kind) {
    case optimizer_kind::sgd: return run_sgd(p, d, s, opts, seed);
    case optimizer_kind::storm: return run_storm(p, d, s, opts, seed);
    case optimizer_kind::cover: return run_cover(p, d, s, opts, seed);
    default: return run_svmr(p, d, s, opts, seed);
  }
}

}  // namespace klvl

#endif  // KLVL_OPTIMIZERS_HPP
