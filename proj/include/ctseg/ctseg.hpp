#pragma once

// Umbrella header for the whole library.

#include "ctseg/augment.hpp"
#include "ctseg/checkpoint.hpp"
#include "ctseg/config.hpp"
#include "ctseg/conv.hpp"
#include "ctseg/error.hpp"
#include "ctseg/infer.hpp"
#include "ctseg/losses.hpp"
#include "ctseg/metrics.hpp"
#include "ctseg/native_io.hpp"
#include "ctseg/network.hpp"
#include "ctseg/nifti.hpp"
#include "ctseg/ops.hpp"
#include "ctseg/optimizer.hpp"
#include "ctseg/parallel.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/pipeline.hpp"
#include "ctseg/postprocess.hpp"
#include "ctseg/rng.hpp"
#include "ctseg/sampler.hpp"
#include "ctseg/sliding.hpp"
#include "ctseg/tensor.hpp"
#include "ctseg/trainer.hpp"
#include "ctseg/volume.hpp"
