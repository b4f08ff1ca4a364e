#ifndef KLVL_KLVL_HPP
#define KLVL_KLVL_HPP

#include "common.hpp"
#include "csv.hpp"
#include "dataset_io.hpp"
#include "estimators.hpp"
#include "experiments.hpp"
#include "invariants.hpp"
#include "optimizers.hpp"
#include "parallel.hpp"
#include "problem.hpp"
#include "rng.hpp"
#include "stability.hpp"
#include "synthetic.hpp"

#endif  // KLVL_KLVL_HPP
