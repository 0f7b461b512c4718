#pragma once

// Umbrella header for the DiffLNS toolkit.

#include "difflns/action_tensor.hpp"
#include "difflns/bench.hpp"
#include "difflns/d3pm.hpp"
#include "difflns/denoiser.hpp"
#include "difflns/grid.hpp"
#include "difflns/instance_gen.hpp"
#include "difflns/lns2.hpp"
#include "difflns/pipeline.hpp"
#include "difflns/rng.hpp"
#include "difflns/single_agent.hpp"
#include "difflns/task_losses.hpp"
