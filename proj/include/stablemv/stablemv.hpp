#pragma once

#include "stablemv/appendix_limits.hpp"
#include "stablemv/coefficients.hpp"
#include "stablemv/counterexample.hpp"
#include "stablemv/csv.hpp"
#include "stablemv/errors.hpp"
#include "stablemv/grid.hpp"
#include "stablemv/kernel_checks.hpp"
#include "stablemv/measure.hpp"
#include "stablemv/metrics.hpp"
#include "stablemv/mv_solver.hpp"
#include "stablemv/parallel.hpp"
#include "stablemv/rng.hpp"
#include "stablemv/stable_paths.hpp"
#include "stablemv/stats.hpp"
#include "stablemv/transport.hpp"
