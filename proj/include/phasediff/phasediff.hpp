#pragma once

#include "phasediff/error.hpp"
#include "phasediff/numerics/autodiff.hpp"
#include "phasediff/numerics/param_vector.hpp"
#include "phasediff/numerics/rng.hpp"
#include "phasediff/numerics/tape.hpp"
#include "phasediff/numerics/tensor.hpp"
#include "phasediff/schedule.hpp"
#include "phasediff/networks.hpp"
#include "phasediff/diffusion.hpp"
#include "phasediff/data.hpp"
#include "phasediff/meta_opt.hpp"
#include "phasediff/eval.hpp"
#include "phasediff/config.hpp"
#include "phasediff/checkpoint.hpp"
#include "phasediff/pipeline.hpp"
