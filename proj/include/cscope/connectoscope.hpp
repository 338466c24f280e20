#pragma once

// Umbrella header for the connectoscope toolkit.

#include "cscope/atlas.hpp"
#include "cscope/checkpoint.hpp"
#include "cscope/connectome.hpp"
#include "cscope/error.hpp"
#include "cscope/forest.hpp"
#include "cscope/grad_check.hpp"
#include "cscope/manifest.hpp"
#include "cscope/metrics.hpp"
#include "cscope/models.hpp"
#include "cscope/nifti.hpp"
#include "cscope/optim.hpp"
#include "cscope/phantom.hpp"
#include "cscope/pipeline.hpp"
#include "cscope/rng.hpp"
#include "cscope/tensor.hpp"
#include "cscope/volume.hpp"
#include "cscope/volume_ops.hpp"
