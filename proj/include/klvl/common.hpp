#ifndef KLVL_COMMON_HPP
#define KLVL_COMMON_HPP

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace klvl {

using vec = Eigen::VectorXd;
using mat = Eigen::MatrixXd;
using index_t = Eigen::Index;

// Argument violates a documented precondition (dimension mismatch,
// out-of-range level/position, empty input, ...).
struct invalid_input : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite number. `level` identifies the
// offending level (0 = not level-specific); `iteration` the offending
// optimizer step (-1 = n/a).
struct numeric_error : std::runtime_error {
  int level = 0;
  long long iteration = -1;
  explicit numeric_error(const std::string& what, int lvl = 0,
                         long long iter = -1)
      : std::runtime_error(what), level(lvl), iteration(iter) {}
};

// Missing or inconsistent configuration (no population surrogate, clashing
// schedule sources, unknown config keys, ...).
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The reference minimizer did not reach its gradient tolerance.
struct oracle_error : std::runtime_error {
  double achieved = 0.0;
  oracle_error(const std::string& what, double grad_norm)
      : std::runtime_error(what), achieved(grad_norm) {}
};

}  // namespace klvl

#endif  // KLVL_COMMON_HPP
