#ifndef KLVL_SYNTHETIC_HPP
#define KLVL_SYNTHETIC_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "common.hpp"
#include "problem.hpp"
#include "rng.hpp"

namespace klvl {

struct generated_problem {
  compositional_problem problem;
  dataset train;
  dataset test;
  vec true_parameters;
};

namespace detail {

// m x n matrix with orthonormal rows (m <= n) or columns (m >= n), scaled to
// spectral norm `scale`. Deterministic in the stream.
inline mat scaled_orthogonal(index_t rows, index_t cols, double scale,
                             rng_stream& rs) {
  const index_t big = std::max(rows, cols);
  const index_t small = std::min(rows, cols);
  mat g(big, small);
  for (index_t i = 0; i < big; ++i)
    for (index_t j = 0; j < small; ++j) g(i, j) = rs.normal();
  Eigen::HouseholderQR<mat> qr(g);
  mat thin_q = qr.householderQ() * mat::Identity(big, small);
  if (rows >= cols) return scale * thin_q;
  return scale * thin_q.transpose();
}

inline std::vector<index_t> iota_counts(index_t n, int levels) {
  return std::vector<index_t>(static_cast<std::size_t>(levels), n);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Univariate quintic regression (one level). The decision variable is the
// six polynomial coefficients; each sample is one noisy (t, y) pair and the
// per-sample loss is the squared error at that pair.
// ---------------------------------------------------------------------------

struct quintic_config {
  index_t n_points = 2000;
  double noise_var = 3.0;
  double split = 0.6;
  // t is drawn from Uniform[-t_range, t_range] mixed with a small fraction
  // of high-leverage points near +-leverage_t. The leverage tail drives the
  // per-sample gradient variance the optimizers must cope with.
  double t_range = 1.5;
  double leverage_fraction = 0.01;
  double leverage_t = 2.5;
};

inline vec quintic_true_coefficients() {
  vec c(6);
  c << 0.3, -0.4, 0.25, 0.2, -0.3, 0.25;
  return c;
}

inline generated_problem make_quintic_problem(const quintic_config& cfg,
                                              std::uint64_t seed) {
  if (cfg.n_points < 2) throw invalid_input("make_quintic_problem: n_points >= 2");
  if (!(cfg.split > 0.0 && cfg.split < 1.0))
    throw invalid_input("make_quintic_problem: split in (0,1)");
  if (!(cfg.leverage_fraction >= 0.0 && cfg.leverage_fraction < 1.0))
    throw invalid_input("make_quintic_problem: leverage_fraction in [0,1)");
  const vec coeffs = quintic_true_coefficients();
  const double noise_sd = std::sqrt(cfg.noise_var);
  const double t_range = cfg.t_range;

  level_spec lvl;
  lvl.in_dim = 6;
  lvl.out_dim = 1;
  lvl.payload_dim = 2;
  lvl.evaluate = [](const Eigen::Ref<const vec>& payload, const vec& x,
                    vec& value, mat* jac) {
    const double t = payload(0);
    double pw = 1.0, pred = 0.0;
    double powers[6];
    for (int i = 0; i < 6; ++i) {
      powers[i] = pw;
      pred += x(i) * pw;
      pw *= t;
    }
    const double r = pred - payload(1);
    value(0) = r * r;
    if (jac)
      for (int i = 0; i < 6; ++i) (*jac)(0, i) = 2.0 * r * powers[i];
  };
  const double lev_p = cfg.leverage_fraction;
  const double lev_t = cfg.leverage_t;
  lvl.sample_payload = [coeffs, noise_sd, t_range, lev_p, lev_t](rng_stream& rs) {
    double t = -t_range + 2.0 * t_range * rs.uniform01();
    const double mix = rs.uniform01();
    const double jitter = rs.uniform01();
    if (mix < lev_p) {
      const double mag = lev_t * (0.9 + 0.2 * jitter);
      t = t < 0.0 ? -mag : mag;
    }
    double pw = 1.0, y = 0.0;
    for (int i = 0; i < 6; ++i) {
      y += coeffs(i) * pw;
      pw *= t;
    }
    vec payload(2);
    payload << t, y + noise_sd * rs.normal();
    return payload;
  };

  const index_t n_train =
      static_cast<index_t>(std::floor(cfg.split * static_cast<double>(cfg.n_points)));
  const index_t n_test = cfg.n_points - n_train;
  lvl.sample_count = n_train;

  problem_constants constants;
  compositional_problem problem({lvl}, constants);
  dataset train = problem.draw_dataset(seed, {n_train}, 0);
  dataset test = problem.draw_dataset(seed, {n_test}, n_train);

  // Data-driven curvature constants: the empirical Hessian is
  // (2/n) sum of feature outer products.
  mat h = mat::Zero(6, 6);
  double max_feat_sq = 0.0, max_lf = 0.0;
  const double radius = 2.0 * coeffs.norm();
  for (index_t j = 0; j < n_train; ++j) {
    const double t = train.payload(1, j)(0);
    const double y = train.payload(1, j)(1);
    vec f(6);
    double pw = 1.0;
    for (int i = 0; i < 6; ++i) {
      f(i) = pw;
      pw *= t;
    }
    h += 2.0 * f * f.transpose();
    max_feat_sq = std::max(max_feat_sq, 2.0 * f.squaredNorm());
    max_lf = std::max(max_lf,
                      2.0 * (f.norm() * radius + std::abs(y)) * f.norm());
  }
  h /= static_cast<double>(n_train);
  Eigen::SelfAdjointEigenSolver<mat> eig(h);
  problem.constants().smoothness = eig.eigenvalues().maxCoeff();
  problem.constants().strong_convexity = std::max(0.0, eig.eigenvalues().minCoeff());
  problem.constants().gradient_lipschitz = max_feat_sq;
  problem.constants().value_lipschitz = max_lf;
  problem.constants().iterate_distance_bound = radius * radius;
  problem.set_test_data(test);
  return {std::move(problem), std::move(train), std::move(test), coeffs};
}

inline generated_problem make_quintic_problem(index_t n_points = 2000,
                                              double noise_var = 3.0,
                                              double split = 0.6,
                                              std::uint64_t seed = 0) {
  quintic_config cfg;
  cfg.n_points = n_points;
  cfg.noise_var = noise_var;
  cfg.split = split;
  return make_quintic_problem(cfg, seed);
}

// ---------------------------------------------------------------------------
// Linear least squares (one level): per-sample loss 0.5*(a.x - y)^2 with
// Gaussian features. Strongly convex once n >= d; constants are computed
// exactly from the training data. Used as the quadratic reference instance
// for stability and estimator-variance studies.
// ---------------------------------------------------------------------------

inline generated_problem make_least_squares_problem(index_t dim,
                                                    index_t n_points,
                                                    double noise_var,
                                                    std::uint64_t seed,
                                                    double feature_scale = 1.0) {
  if (dim < 1 || n_points < 1)
    throw invalid_input("make_least_squares_problem: bad sizes");

  rng_stream target_rs(seed, stream::planted_target);
  vec x_star(dim);
  for (index_t i = 0; i < dim; ++i) x_star(i) = target_rs.normal();
  const double noise_sd = std::sqrt(noise_var);

  level_spec lvl;
  lvl.in_dim = dim;
  lvl.out_dim = 1;
  lvl.payload_dim = dim + 1;
  lvl.sample_count = n_points;
  lvl.evaluate = [dim](const Eigen::Ref<const vec>& payload, const vec& x,
                       vec& value, mat* jac) {
    const double r = payload.head(dim).dot(x) - payload(dim);
    value(0) = 0.5 * r * r;
    if (jac) jac->row(0) = r * payload.head(dim).transpose();
  };
  lvl.sample_payload = [dim, x_star, noise_sd, feature_scale](rng_stream& rs) {
    vec payload(dim + 1);
    for (index_t i = 0; i < dim; ++i) payload(i) = feature_scale * rs.normal();
    payload(dim) = payload.head(dim).dot(x_star) + noise_sd * rs.normal();
    return payload;
  };

  problem_constants constants;
  compositional_problem problem({lvl}, constants);
  dataset train = problem.draw_dataset(seed, {n_points}, 0);
  dataset test = problem.draw_dataset(seed, {n_points}, n_points);

  mat h = mat::Zero(dim, dim);
  double max_feat_sq = 0.0, max_lf = 0.0, sigma_j_sq = 0.0;
  const double radius = 2.0 * (x_star.norm() + 1.0);
  for (index_t j = 0; j < n_points; ++j) {
    const vec a = train.payload(1, j).head(dim);
    const double y = train.payload(1, j)(dim);
    h += a * a.transpose();
    max_feat_sq = std::max(max_feat_sq, a.squaredNorm());
    max_lf = std::max(max_lf, (a.norm() * radius + std::abs(y)) * a.norm());
  }
  h /= static_cast<double>(n_points);
  // Empirical Jacobian variance at x_star (an estimate, not a sup).
  {
    vec mean_grad = vec::Zero(dim);
    for (index_t j = 0; j < n_points; ++j) {
      const vec a = train.payload(1, j).head(dim);
      const double r = a.dot(x_star) - train.payload(1, j)(dim);
      mean_grad += r * a;
    }
    mean_grad /= static_cast<double>(n_points);
    for (index_t j = 0; j < n_points; ++j) {
      const vec a = train.payload(1, j).head(dim);
      const double r = a.dot(x_star) - train.payload(1, j)(dim);
      sigma_j_sq += (r * a - mean_grad).squaredNorm();
    }
    sigma_j_sq /= static_cast<double>(n_points);
  }
  Eigen::SelfAdjointEigenSolver<mat> eig(h);
  problem.constants().smoothness = eig.eigenvalues().maxCoeff();
  problem.constants().strong_convexity = std::max(0.0, eig.eigenvalues().minCoeff());
  problem.constants().gradient_lipschitz = max_feat_sq;
  problem.constants().value_lipschitz = max_lf;
  problem.constants().sigma_jacobian = std::sqrt(sigma_j_sq);
  problem.constants().iterate_distance_bound = radius * radius;
  problem.set_test_data(test);
  problem.set_population_oracle([x_star, noise_var](const vec& x) {
    return 0.5 * ((x - x_star).squaredNorm() + noise_var);
  });
  return {std::move(problem), std::move(train), std::move(test), x_star};
}

// ---------------------------------------------------------------------------
// K-level synthetic family. Levels 1..K-1 are a fixed smooth base map
// (affine plus tanh) with additive per-sample Gaussian output noise; the
// final level is the squared distance to a noisy target planted at the
// noiseless forward image of the true parameter vector. Base maps and
// noise draws are keyed by the level's distance from the top so that
// sweeps over K (or over the noise variance) share random numbers.
// ---------------------------------------------------------------------------

struct klevel_config {
  int levels = 10;                 // K
  std::vector<index_t> dims;       // d_0 .. d_K (d_K = 1); empty = uniform width
  index_t width = 4;               // used when dims is empty
  index_t n_per_level = 2000;      // pre-split sample count per level
  double noise_var = 3.0;
  double split = 0.6;
  double linear_gain = 1.0;        // spectral norm of the affine part
  double tanh_gain = 0.25;         // alpha
  double tanh_rotation_gain = 1.0; // spectral norm inside tanh
};

inline generated_problem make_klevel_synthetic(const klevel_config& cfg,
                                               std::uint64_t seed) {
  const int k_levels = cfg.levels;
  if (k_levels < 1) throw invalid_input("make_klevel_synthetic: K >= 1");
  if (cfg.n_per_level < 2)
    throw invalid_input("make_klevel_synthetic: n_per_level >= 2");
  if (!(cfg.split > 0.0 && cfg.split < 1.0))
    throw invalid_input("make_klevel_synthetic: split in (0,1)");
  if (!(cfg.noise_var >= 0.0))
    throw invalid_input("make_klevel_synthetic: noise_var >= 0");

  std::vector<index_t> dims = cfg.dims;
  if (dims.empty()) {
    dims.assign(static_cast<std::size_t>(k_levels) + 1, cfg.width);
    dims.back() = 1;
  }
  if (static_cast<int>(dims.size()) != k_levels + 1)
    throw invalid_input("make_klevel_synthetic: dims must have K+1 entries");
  if (dims.back() != 1)
    throw invalid_input("make_klevel_synthetic: final dim must be 1");
  for (index_t d : dims)
    if (d < 1) throw invalid_input("make_klevel_synthetic: dims must be >= 1");

  const double noise_sd = std::sqrt(cfg.noise_var);
  const double alpha = cfg.tanh_gain;
  const index_t n_train = static_cast<index_t>(
      std::floor(cfg.split * static_cast<double>(cfg.n_per_level)));
  const index_t n_test = cfg.n_per_level - n_train;

  // x_star drawn once per seed, independent of K.
  rng_stream target_rs(seed, stream::planted_target);
  vec x_star(dims[0]);
  for (index_t i = 0; i < dims[0]; ++i) x_star(i) = 0.7 * target_rs.normal();

  struct base_map {
    mat a, w;
    vec b;
  };
  std::vector<base_map> maps(static_cast<std::size_t>(k_levels) - 1);
  for (int k = 1; k < k_levels; ++k) {
    const std::uint64_t tier = static_cast<std::uint64_t>(k_levels - k);
    const index_t din = dims[static_cast<std::size_t>(k - 1)];
    const index_t dout = dims[static_cast<std::size_t>(k)];
    rng_stream ra(seed, stream::base_map, tier, 0);
    rng_stream rw(seed, stream::base_map, tier, 1);
    rng_stream rb(seed, stream::base_map, tier, 2);
    base_map& m = maps[static_cast<std::size_t>(k - 1)];
    m.a = detail::scaled_orthogonal(dout, din, cfg.linear_gain, ra);
    m.w = detail::scaled_orthogonal(dout, din, cfg.tanh_rotation_gain, rw);
    m.b.resize(dout);
    for (index_t i = 0; i < dout; ++i) m.b(i) = 0.2 * rb.normal();
  }

  // Noiseless forward image of x_star: the planted loss-level target.
  vec planted = x_star;
  for (const base_map& m : maps)
    planted = (m.a * planted + m.b +
               alpha * (m.w * planted).array().tanh().matrix())
                  .eval();

  std::vector<level_spec> levels(static_cast<std::size_t>(k_levels));
  for (int k = 1; k < k_levels; ++k) {
    level_spec& lvl = levels[static_cast<std::size_t>(k - 1)];
    const base_map& m = maps[static_cast<std::size_t>(k - 1)];
    lvl.in_dim = dims[static_cast<std::size_t>(k - 1)];
    lvl.out_dim = dims[static_cast<std::size_t>(k)];
    lvl.payload_dim = lvl.out_dim;
    lvl.sample_count = n_train;
    lvl.stream_label = static_cast<std::uint64_t>(k_levels - k);
    const mat a = m.a, w = m.w;
    const vec b = m.b;
    const double gain = alpha;
    lvl.evaluate = [a, w, b, gain](const Eigen::Ref<const vec>& payload,
                                   const vec& y, vec& value, mat* jac) {
      static thread_local vec th;
      th.noalias() = w * y;
      th = th.array().tanh().matrix();
      value.noalias() = a * y;
      value += b + payload + gain * th;
      if (jac) {
        *jac = a;
        jac->noalias() +=
            gain * ((1.0 - th.array().square()).matrix().asDiagonal() * w);
      }
    };
    const index_t dout = lvl.out_dim;
    lvl.sample_payload = [dout, noise_sd](rng_stream& rs) {
      vec payload(dout);
      for (index_t i = 0; i < dout; ++i) payload(i) = noise_sd * rs.normal();
      return payload;
    };
  }
  {
    // Top level: squared distance to a noisy planted target.
    level_spec& lvl = levels[static_cast<std::size_t>(k_levels - 1)];
    lvl.in_dim = dims[static_cast<std::size_t>(k_levels - 1)];
    lvl.out_dim = 1;
    lvl.payload_dim = lvl.in_dim;
    lvl.sample_count = n_train;
    lvl.stream_label = 0;
    lvl.evaluate = [](const Eigen::Ref<const vec>& payload, const vec& y,
                      vec& value, mat* jac) {
      static thread_local vec diff;
      diff = y - payload;
      value(0) = 0.5 * diff.squaredNorm();
      if (jac) jac->row(0) = diff.transpose();
    };
    const index_t din = lvl.in_dim;
    const vec target = planted;
    lvl.sample_payload = [din, target, noise_sd](rng_stream& rs) {
      vec payload(din);
      for (index_t i = 0; i < din; ++i)
        payload(i) = target(i) + noise_sd * rs.normal();
      return payload;
    };
  }

  problem_constants constants;
  const double level_lip = cfg.linear_gain + alpha * cfg.tanh_rotation_gain;
  constants.value_lipschitz = level_lip;
  constants.gradient_lipschitz =
      std::max(1.0, 0.7699 * alpha * cfg.tanh_rotation_gain *
                        cfg.tanh_rotation_gain);
  constants.smoothness = std::pow(level_lip, 2.0 * (k_levels - 1));
  constants.sigma_value = std::sqrt(
      cfg.noise_var * static_cast<double>(*std::max_element(dims.begin(), dims.end())));
  constants.iterate_distance_bound = 4.0 * (x_star.squaredNorm() + 1.0);

  compositional_problem problem(std::move(levels), constants);
  dataset train =
      problem.draw_dataset(seed, detail::iota_counts(n_train, k_levels), 0);
  dataset test =
      problem.draw_dataset(seed, detail::iota_counts(n_test, k_levels), n_train);
  problem.set_test_data(test);
  return {std::move(problem), std::move(train), std::move(test), x_star};
}

inline generated_problem make_klevel_synthetic(int levels,
                                               std::vector<index_t> dims,
                                               index_t n_per_level,
                                               double noise_var,
                                               std::uint64_t seed) {
  klevel_config cfg;
  cfg.levels = levels;
  cfg.dims = std::move(dims);
  cfg.n_per_level = n_per_level;
  cfg.noise_var = noise_var;
  return make_klevel_synthetic(cfg, seed);
}

}  // namespace klvl

#endif  // KLVL_SYNTHETIC_HPP
