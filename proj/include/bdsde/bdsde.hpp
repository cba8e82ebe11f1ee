#pragma once

#include "bdsde/csv.hpp"
#include "bdsde/estimates.hpp"
#include "bdsde/grid_paths.hpp"
#include "bdsde/linalg.hpp"
#include "bdsde/parallel.hpp"
#include "bdsde/problem_model.hpp"
#include "bdsde/rng.hpp"
#include "bdsde/solver.hpp"
#include "bdsde/stochastic_calculus.hpp"
