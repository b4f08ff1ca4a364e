#ifndef KLVL_PROBLEM_HPP
#define KLVL_PROBLEM_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace klvl {

// One sampled function of a level. `payload` is the sample realization,
// `input` the point y in R^{d_{k-1}}. Writes the value f^{payload}(y) into
// `value` (pre-sized to out_dim) and, when `jacobian` is non-null, the
// Jacobian into it (pre-sized to out_dim x in_dim). Must be re-entrant and
// deterministic in (payload, input).
using level_evaluator = std::function<void(
    const Eigen::Ref<const vec>& payload, const vec& input, vec& value,
    mat* jacobian)>;

// Draws one fresh payload realization from the level's sample distribution.
using payload_sampler = std::function<vec(rng_stream&)>;

struct level_spec {
  index_t in_dim = 0;    // d_{k-1}
  index_t out_dim = 0;   // d_k
  index_t sample_count = 0;  // n_k
  index_t payload_dim = 0;
  level_evaluator evaluate;
  payload_sampler sample_payload;
  // Component of the payload-stream key. Generators that want common random
  // numbers across related problems (e.g. a level-count sweep) may key
  // levels by their distance from the top instead of their index.
  std::uint64_t stream_label = 0;
};

struct problem_constants {
  double value_lipschitz = 1.0;     // L_f of the per-level value maps
  double gradient_lipschitz = 1.0;  // Lipschitz constant of per-level gradients
  double smoothness = 1.0;          // L of the empirical objective
  double strong_convexity = 0.0;    // mu (0 = merely convex)
  double sigma_value = 0.0;         // empirical value-variance bound (estimate)
  double sigma_jacobian = 0.0;      // empirical Jacobian-variance bound (estimate)
  std::optional<double> domain_radius;  // feasible ball; absent = unconstrained
  double iterate_distance_bound = 1.0;  // D_x
  // Two-level extras (K = 2 problems only).
  std::optional<double> inner_lipschitz;        // L_g
  std::optional<double> outer_grad_lipschitz;   // C_f
  std::optional<double> sigma_inner_value;      // sigma_g
  std::optional<double> sigma_inner_jacobian;   // sigma_g'
};

// Immutable per-level sample collections. Payloads for level k are stored
// as a payload_dim x n_k matrix; column j is sample j. Levels and positions
// are 1-based throughout the public surface.
class dataset {
 public:
  dataset() = default;
  dataset(std::uint64_t seed, std::vector<mat> payload_columns)
      : seed_(seed), payloads_(std::move(payload_columns)) {}

  std::uint64_t seed() const { return seed_; }
  int levels() const { return static_cast<int>(payloads_.size()); }
  index_t count(int level) const { return payloads_.at(level - 1).cols(); }
  index_t payload_dim(int level) const { return payloads_.at(level - 1).rows(); }

  // Sample j (0-based) of the given level.
  Eigen::Ref<const vec> payload(int level, index_t j) const {
    return payloads_[level - 1].col(j);
  }
  const mat& level_payloads(int level) const { return payloads_.at(level - 1); }

  // Copy with the sample at (level, position) replaced; position is 1-based.
  dataset with_payload(int level, index_t position, const vec& sample) const {
    if (level < 1 || level > levels() || position < 1 ||
        position > count(level))
      throw invalid_input("dataset::with_payload: (level, position) out of range");
    if (sample.size() != payload_dim(level))
      throw invalid_input("dataset::with_payload: payload dimension mismatch");
    dataset out = *this;
    out.payloads_[level - 1].col(position - 1) = sample;
    return out;
  }

 private:
  std::uint64_t seed_ = 0;
  std::vector<mat> payloads_;
};

// A K-level compositional objective F_S = f_K,S o ... o f_1,S with an
// optional population oracle (analytic, or a held-out dataset surrogate).
class compositional_problem {
 public:
  compositional_problem(std::vector<level_spec> levels,
                        problem_constants constants)
      : levels_(std::move(levels)), constants_(constants) {
    if (levels_.empty())
      throw invalid_input("compositional_problem: needs at least one level");
    for (std::size_t i = 0; i + 1 < levels_.size(); ++i) {
      if (levels_[i].out_dim != levels_[i + 1].in_dim)
        throw invalid_input(
            "compositional_problem: level dimensions do not chain at level " +
            std::to_string(i + 2));
    }
    if (levels_.back().out_dim != 1)
      throw invalid_input("compositional_problem: final level must be scalar");
    for (const auto& l : levels_) {
      if (l.in_dim <= 0 || l.out_dim <= 0 || l.sample_count <= 0)
        throw invalid_input("compositional_problem: bad level dimensions");
      if (!l.evaluate)
        throw invalid_input("compositional_problem: missing level evaluator");
    }
  }

  int num_levels() const { return static_cast<int>(levels_.size()); }
  index_t input_dim() const { return levels_.front().in_dim; }
  const level_spec& level(int k) const { return levels_.at(k - 1); }
  const problem_constants& constants() const { return constants_; }
  problem_constants& constants() { return constants_; }

  void set_population_oracle(std::function<double(const vec&)> oracle) {
    population_oracle_ = std::move(oracle);
  }
  void set_test_data(dataset test) { test_data_ = std::move(test); }
  const std::function<double(const vec&)>& population_oracle() const {
    return population_oracle_;
  }
  const std::optional<dataset>& test_data() const { return test_data_; }

  // Draws a dataset with `counts[k-1]` samples at level k. Sample j of
  // level k comes from the stream (seed, dataset_payload, stream_label_k,
  // index_offset + j), so identical (generator, seed) are bit-identical and
  // disjoint index ranges give disjoint draws (used for train/test splits).
  dataset draw_dataset(std::uint64_t seed, const std::vector<index_t>& counts,
                       index_t index_offset = 0) const {
    if (static_cast<int>(counts.size()) != num_levels())
      throw invalid_input("draw_dataset: counts size != level count");
    std::vector<mat> payloads(levels_.size());
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      const level_spec& l = levels_[i];
      if (!l.sample_payload)
        throw config_error("draw_dataset: level has no payload sampler");
      payloads[i].resize(l.payload_dim, counts[i]);
      for (index_t j = 0; j < counts[i]; ++j) {
        rng_stream rs(seed, stream::dataset_payload, l.stream_label,
                      static_cast<std::uint64_t>(index_offset + j));
        payloads[i].col(j) = l.sample_payload(rs);
      }
    }
    return dataset(seed, std::move(payloads));
  }

  dataset draw_dataset(std::uint64_t seed) const {
    std::vector<index_t> counts;
    counts.reserve(levels_.size());
    for (const auto& l : levels_) counts.push_back(l.sample_count);
    return draw_dataset(seed, counts);
  }

 private:
  std::vector<level_spec> levels_;
  problem_constants constants_;
  std::function<double(const vec&)> population_oracle_;
  std::optional<dataset> test_data_;
};

namespace detail {

inline void check_problem_data(const compositional_problem& p,
                               const dataset& d, const vec& x) {
  if (x.size() != p.input_dim())
    throw invalid_input("input dimension does not match the problem");
  if (d.levels() != p.num_levels())
    throw invalid_input("dataset level count does not match the problem");
  for (int k = 1; k <= p.num_levels(); ++k)
    if (d.payload_dim(k) != p.level(k).payload_dim)
      throw invalid_input("dataset payload dimension mismatch at level " +
                          std::to_string(k));
}

}  // namespace detail

// Mean value (and, when mean_jacobian != nullptr, mean Jacobian) of level k
// over the given sample columns, evaluated at `input`. Scratch buffers are
// caller-provided so hot loops do not allocate.
inline void level_batch_mean(const compositional_problem& p, const dataset& d,
                             int k, std::span<const index_t> samples,
                             const vec& input, vec& mean_value,
                             mat* mean_jacobian, vec& value_scratch,
                             mat& jac_scratch) {
  const level_spec& lvl = p.level(k);
  mean_value.setZero(lvl.out_dim);
  value_scratch.resize(lvl.out_dim);
  if (mean_jacobian) {
    mean_jacobian->setZero(lvl.out_dim, lvl.in_dim);
    jac_scratch.resize(lvl.out_dim, lvl.in_dim);
  }
  for (index_t j : samples) {
    lvl.evaluate(d.payload(k, j), input, value_scratch,
                 mean_jacobian ? &jac_scratch : nullptr);
    mean_value += value_scratch;
    if (mean_jacobian) *mean_jacobian += jac_scratch;
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  mean_value *= inv;
  if (mean_jacobian) *mean_jacobian *= inv;
  if (!mean_value.allFinite() ||
      (mean_jacobian && !mean_jacobian->allFinite()))
    throw numeric_error("non-finite level mean at level " + std::to_string(k),
                        k);
}

// Full-batch mean of level k at `input`.
inline void level_full_mean(const compositional_problem& p, const dataset& d,
                            int k, const vec& input, vec& mean_value,
                            mat* mean_jacobian) {
  std::vector<index_t> all(static_cast<std::size_t>(d.count(k)));
  for (index_t j = 0; j < d.count(k); ++j) all[static_cast<std::size_t>(j)] = j;
  vec vtmp;
  mat jtmp;
  level_batch_mean(p, d, k, all, input, mean_value, mean_jacobian, vtmp, jtmp);
}

struct empirical_forward {
  std::vector<vec> means;          // y_0 .. y_K (y_0 = x)
  std::vector<mat> mean_jacobians; // J_1 .. J_K, J_k evaluated at y_{k-1}
};

// Nested full-batch means (and per-level mean Jacobians when requested).
inline empirical_forward empirical_intermediates(
    const compositional_problem& p, const dataset& d, const vec& x,
    bool with_jacobians) {
  detail::check_problem_data(p, d, x);
  empirical_forward out;
  out.means.resize(static_cast<std::size_t>(p.num_levels()) + 1);
  if (with_jacobians)
    out.mean_jacobians.resize(static_cast<std::size_t>(p.num_levels()));
  out.means[0] = x;
  for (int k = 1; k <= p.num_levels(); ++k) {
    vec mean;
    mat* jac = with_jacobians ? &out.mean_jacobians[static_cast<std::size_t>(k - 1)]
                              : nullptr;
    level_full_mean(p, d, k, out.means[static_cast<std::size_t>(k - 1)], mean,
                    jac);
    out.means[static_cast<std::size_t>(k)] = std::move(mean);
  }
  return out;
}

// F_S(x): the nested full-batch empirical risk.
inline double empirical_value(const compositional_problem& p, const dataset& d,
                              const vec& x) {
  return empirical_intermediates(p, d, x, false).means.back()(0);
}

// grad F_S(x) via the chain rule through the per-level empirical means.
// The Jacobian product J_K * J_{K-1} * ... * J_1 is 1 x d0 (the final level
// is scalar); the transpose is returned as a d0-vector.
inline vec empirical_gradient(const compositional_problem& p, const dataset& d,
                              const vec& x) {
  empirical_forward fwd = empirical_intermediates(p, d, x, true);
  mat prod = fwd.mean_jacobians.back();
  for (int i = static_cast<int>(fwd.mean_jacobians.size()) - 2; i >= 0; --i)
    prod = prod * fwd.mean_jacobians[static_cast<std::size_t>(i)];
  return prod.transpose().col(0);
}

// Population risk: the analytic oracle when present, otherwise the held-out
// test dataset as its surrogate.
inline double population_value(const compositional_problem& p, const vec& x) {
  if (p.population_oracle()) return p.population_oracle()(x);
  if (p.test_data()) return empirical_value(p, *p.test_data(), x);
  throw config_error(
      "population_value: no analytic oracle and no held-out dataset");
}

// Neighboring dataset: identical to `d` except the sample at (level,
// position) is redrawn i.i.d. from the level's generator using `rng`.
// `d` is not mutated. Level and position are 1-based.
inline dataset neighbor(const compositional_problem& p, const dataset& d,
                        int level, index_t position, rng_stream& rng) {
  if (level < 1 || level > d.levels())
    throw invalid_input("neighbor: level out of range");
  if (position < 1 || position > d.count(level))
    throw invalid_input("neighbor: position out of range");
  const payload_sampler& sampler = p.level(level).sample_payload;
  if (!sampler) throw config_error("neighbor: level has no payload sampler");
  return d.with_payload(level, position, sampler(rng));
}

// Central finite differences of F_S, the independent gradient oracle.
inline vec finite_difference_gradient(const compositional_problem& p,
                                      const dataset& d, const vec& x,
                                      double h) {
  if (!(h > 0)) throw invalid_input("finite_difference_gradient: h must be > 0");
  vec g(x.size());
  vec xp = x;
  for (index_t i = 0; i < x.size(); ++i) {
    const double xi = x(i);
    xp(i) = xi + h;
    const double fp = empirical_value(p, d, xp);
    xp(i) = xi - h;
    const double fm = empirical_value(p, d, xp);
    xp(i) = xi;
    g(i) = (fp - fm) / (2.0 * h);
  }
  if (!g.allFinite())
    throw numeric_error("finite_difference_gradient: non-finite result");
  return g;
}

}  // namespace klvl

#endif  // KLVL_PROBLEM_HPP
