#pragma once

// Umbrella header for the rescalk library.

#include "rescalk/dist_rescal.hpp"
#include "rescalk/error.hpp"
#include "rescalk/grid.hpp"
#include "rescalk/instrument.hpp"
#include "rescalk/kernels.hpp"
#include "rescalk/lsa.hpp"
#include "rescalk/model_select.hpp"
#include "rescalk/perf.hpp"
#include "rescalk/perturb.hpp"
#include "rescalk/rescal.hpp"
#include "rescalk/synth.hpp"
#include "rescalk/tensor.hpp"
#include "rescalk/tensor_io.hpp"
#include "rescalk/types.hpp"
