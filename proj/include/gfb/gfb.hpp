#pragma once

#include "gfb/grid.hpp"
#include "gfb/ot.hpp"
#include "gfb/coupling.hpp"
#include "gfb/nn.hpp"
#include "gfb/checkpoint.hpp"
#include "gfb/flow.hpp"
#include "gfb/sampler.hpp"
#include "gfb/analysis.hpp"
#include "gfb/tasks.hpp"
#include "gfb/io.hpp"
#include "gfb/svg.hpp"
#include "gfb/experiment.hpp"
