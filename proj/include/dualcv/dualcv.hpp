#pragma once

#include "dualcv/aggregation.hpp"
#include "dualcv/backbone.hpp"
#include "dualcv/costvol.hpp"
#include "dualcv/gradcheck.hpp"
#include "dualcv/metrics.hpp"
#include "dualcv/model.hpp"
#include "dualcv/regression.hpp"
#include "dualcv/io/checkpoint.hpp"
#include "dualcv/io/config.hpp"
#include "dualcv/io/pfm.hpp"
#include "dualcv/io/png.hpp"
#include "dualcv/io/synth.hpp"
