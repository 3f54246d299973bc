#pragma once

#include "uqscale/errors.hpp"
#include "uqscale/linalg.hpp"
#include "uqscale/rng.hpp"
#include "uqscale/datasets.hpp"
#include "uqscale/uq_metrics.hpp"
#include "uqscale/blr.hpp"
#include "uqscale/nnet.hpp"
#include "uqscale/parallel.hpp"
#include "uqscale/laplace.hpp"
#include "uqscale/samplers.hpp"
#include "uqscale/scaling_fit.hpp"
#include "uqscale/svg.hpp"
#include "uqscale/platform.hpp"
#include "uqscale/experiment.hpp"
