#pragma once

#include "ddpmfus/checkpoint.hpp"
#include "ddpmfus/config.hpp"
#include "ddpmfus/cube.hpp"
#include "ddpmfus/cube_io.hpp"
#include "ddpmfus/degrade.hpp"
#include "ddpmfus/denoiser.hpp"
#include "ddpmfus/diffusion.hpp"
#include "ddpmfus/errors.hpp"
#include "ddpmfus/metrics.hpp"
#include "ddpmfus/ops.hpp"
#include "ddpmfus/optim.hpp"
#include "ddpmfus/sampler.hpp"
#include "ddpmfus/schedule.hpp"
#include "ddpmfus/synthetic.hpp"
#include "ddpmfus/tensor.hpp"
#include "ddpmfus/trainer.hpp"
#include "ddpmfus/version.hpp"
