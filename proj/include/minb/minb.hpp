#pragma once

#include "minb/artifact.hpp"
#include "minb/dataset_io.hpp"
#include "minb/diagnostics.hpp"
#include "minb/em_solver.hpp"
#include "minb/error.hpp"
#include "minb/glm.hpp"
#include "minb/model.hpp"
#include "minb/nbcore.hpp"
#include "minb/parallel.hpp"
#include "minb/rng.hpp"
#include "minb/simbench.hpp"
#include "minb/tuning.hpp"
