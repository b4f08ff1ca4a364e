#ifndef KLVL_ESTIMATORS_HPP
#define KLVL_ESTIMATORS_HPP

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "problem.hpp"
#include "rng.hpp"

namespace klvl {

// Projection onto the Frobenius-norm ball of the given radius (clip by
// norm). The rescale loop guarantees the output norm is <= radius in exact
// floating-point terms, which makes the projection bit-exactly idempotent.
template <typename XprType>
inline XprType project_ball_impl(const XprType& m, double radius) {
  if (!(radius > 0.0)) throw invalid_input("project_ball: radius must be > 0");
  const double n = m.norm();
  if (!std::isfinite(n)) throw numeric_error("project_ball: non-finite input");
  if (n <= radius) return m;
  XprType out = m * (radius / n);
  double on = out.norm();
  while (on > radius) {
    double scale = radius / on;
    if (!(scale < 1.0)) scale = 1.0 - std::numeric_limits<double>::epsilon();
    out *= scale;
    on = out.norm();
  }
  return out;
}

inline mat project_ball(const mat& m, double radius) {
  return project_ball_impl(m, radius);
}
inline vec project_ball(const vec& v, double radius) {
  return project_ball_impl(v, radius);
}

// Recursive-momentum gradient-estimator update:
//   v' = Pi_{L_f}[ grad_new + (1 - beta) * (v - grad_old) ]
// grad_new and grad_old must come from the same sample (or minibatch)
// evaluated at the new and old point respectively.
inline mat storm_update(const mat& v, const mat& grad_new, const mat& grad_old,
                        double beta, double lf_radius) {
  if (!(beta > 0.0 && beta <= 1.0))
    throw invalid_input("storm_update: beta must be in (0, 1]");
  if (v.rows() != grad_new.rows() || v.cols() != grad_new.cols() ||
      v.rows() != grad_old.rows() || v.cols() != grad_old.cols())
    throw invalid_input("storm_update: shape mismatch");
  return project_ball(mat(grad_new + (1.0 - beta) * (v - grad_old)), lf_radius);
}

// Paired value/Jacobian update of the two-level algorithm: the value
// estimator is unprojected, the Jacobian estimator is projected.
inline std::pair<vec, mat> cover_update(const vec& u, const mat& v,
                                        const vec& g_new, const vec& g_old,
                                        const mat& j_new, const mat& j_old,
                                        double beta, double lf_radius) {
  if (!(beta > 0.0 && beta <= 1.0))
    throw invalid_input("cover_update: beta must be in (0, 1]");
  if (u.size() != g_new.size() || u.size() != g_old.size())
    throw invalid_input("cover_update: value shape mismatch");
  if (v.rows() != j_new.rows() || v.cols() != j_new.cols() ||
      v.rows() != j_old.rows() || v.cols() != j_old.cols())
    throw invalid_input("cover_update: jacobian shape mismatch");
  vec u_next = g_new + (1.0 - beta) * (u - g_old);
  mat v_next = project_ball(mat(j_new + (1.0 - beta) * (v - j_old)), lf_radius);
  return {std::move(u_next), std::move(v_next)};
}

// Per-level value estimators u^(1..K) and projected Jacobian estimators
// v^(1..K). u^(0) is aliased to the current iterate and not stored.
struct estimator_chain {
  std::vector<vec> values;     // values[i-1] = u^(i), dimension d_i
  std::vector<mat> jacobians;  // jacobians[i-1] = v^(i), d_i x d_{i-1}
  double radius = 1.0;         // L_f

  int levels() const { return static_cast<int>(values.size()); }
};

namespace detail {

inline void check_chain(const estimator_chain& chain,
                        const compositional_problem& p) {
  if (chain.levels() != p.num_levels())
    throw invalid_input("estimator chain level count mismatch");
  for (int k = 1; k <= p.num_levels(); ++k) {
    const level_spec& lvl = p.level(k);
    if (chain.values[static_cast<std::size_t>(k - 1)].size() != lvl.out_dim ||
        chain.jacobians[static_cast<std::size_t>(k - 1)].rows() != lvl.out_dim ||
        chain.jacobians[static_cast<std::size_t>(k - 1)].cols() != lvl.in_dim)
      throw invalid_input("estimator chain shape mismatch at level " +
                          std::to_string(k));
  }
}

// Draws `batch` sample indices for level k. A batch covering the whole
// level is deterministic (full sweep, no stream consumption); smaller
// batches sample with replacement.
inline void draw_batch(rng_stream& rng, index_t level_count, index_t batch,
                       std::vector<index_t>& out) {
  out.clear();
  if (batch >= level_count) {
    for (index_t j = 0; j < level_count; ++j) out.push_back(j);
    return;
  }
  for (index_t j = 0; j < batch; ++j)
    out.push_back(static_cast<index_t>(
        rng.uniform_index(static_cast<std::uint64_t>(level_count))));
}

}  // namespace detail

// One recursive-momentum step of the K-level chain. Levels update in order
// i = 1..K; level i draws one minibatch and evaluates values and Jacobians
// at the already-updated u^(i-1) of the new chain and the retained u^(i-1)
// of the old chain, with u^(0) = x_new / x_old. Returns a new chain; the
// old one is untouched.
inline estimator_chain svmr_step(const estimator_chain& chain,
                                 const vec& x_new, const vec& x_old,
                                 const compositional_problem& p,
                                 const dataset& d, index_t batch, double beta,
                                 rng_stream& rng) {
  if (!(beta > 0.0 && beta <= 1.0))
    throw invalid_input("svmr_step: beta must be in (0, 1]");
  if (batch < 1) throw invalid_input("svmr_step: batch must be >= 1");
  detail::check_chain(chain, p);
  if (x_new.size() != p.input_dim() || x_old.size() != p.input_dim())
    throw invalid_input("svmr_step: iterate dimension mismatch");

  estimator_chain next;
  next.radius = chain.radius;
  next.values.resize(chain.values.size());
  next.jacobians.resize(chain.jacobians.size());

  std::vector<index_t> idx;
  vec val_new, val_old, vtmp;
  mat jac_new, jac_old, jtmp;
  const vec* point_new = &x_new;
  const vec* point_old = &x_old;
  for (int i = 1; i <= p.num_levels(); ++i) {
    const std::size_t s = static_cast<std::size_t>(i - 1);
    detail::draw_batch(rng, d.count(i), batch, idx);
    level_batch_mean(p, d, i, idx, *point_new, val_new, &jac_new, vtmp, jtmp);
    level_batch_mean(p, d, i, idx, *point_old, val_old, &jac_old, vtmp, jtmp);
    next.values[s] = val_new + (1.0 - beta) * (chain.values[s] - val_old);
    next.jacobians[s] = project_ball(
        mat(jac_new + (1.0 - beta) * (chain.jacobians[s] - jac_old)),
        chain.radius);
    if (!next.values[s].allFinite() || !next.jacobians[s].allFinite())
      throw numeric_error("svmr_step: non-finite estimator at level " +
                          std::to_string(i), i);
    point_new = &next.values[s];
    point_old = &chain.values[s];
  }
  return next;
}

// Initializes the chain with minibatch means of size `initial_batch`
// evaluated along the nested chain at x0; Jacobian estimators are
// projected.
inline estimator_chain init_chain(const compositional_problem& p,
                                  const dataset& d, const vec& x0,
                                  index_t initial_batch, double lf_radius,
                                  rng_stream& rng) {
  if (initial_batch < 1)
    throw invalid_input("init_chain: initial_batch must be >= 1");
  for (int k = 1; k <= p.num_levels(); ++k)
    if (initial_batch > d.count(k))
      throw invalid_input("init_chain: initial_batch exceeds sample count of level " +
                          std::to_string(k));
  if (x0.size() != p.input_dim())
    throw invalid_input("init_chain: x0 dimension mismatch");
  estimator_chain chain;
  chain.radius = lf_radius;
  chain.values.resize(static_cast<std::size_t>(p.num_levels()));
  chain.jacobians.resize(static_cast<std::size_t>(p.num_levels()));
  std::vector<index_t> idx;
  vec vtmp, mean_val;
  mat jtmp, mean_jac;
  const vec* point = &x0;
  for (int i = 1; i <= p.num_levels(); ++i) {
    const std::size_t s = static_cast<std::size_t>(i - 1);
    detail::draw_batch(rng, d.count(i), initial_batch, idx);
    level_batch_mean(p, d, i, idx, *point, mean_val, &mean_jac, vtmp, jtmp);
    chain.values[s] = mean_val;
    chain.jacobians[s] = project_ball(mean_jac, lf_radius);
    point = &chain.values[s];
  }
  return chain;
}

// (v^(K) * v^(K-1) * ... * v^(1))^T as a d0-vector; the composite gradient
// estimate used for the iterate update.
inline vec chained_gradient(const estimator_chain& chain) {
  if (chain.levels() == 0) throw invalid_input("chained_gradient: empty chain");
  mat prod = chain.jacobians.back();
  for (int i = chain.levels() - 2; i >= 0; --i)
    prod = prod * chain.jacobians[static_cast<std::size_t>(i)];
  return prod.transpose().col(0);
}

}  // namespace klvl

#endif  // KLVL_ESTIMATORS_HPP
