#pragma once

#include "fasco/calibrate.hpp"
#include "fasco/catalog.hpp"
#include "fasco/explain.hpp"
#include "fasco/features.hpp"
#include "fasco/io.hpp"
#include "fasco/metrics.hpp"
#include "fasco/model.hpp"
#include "fasco/nn.hpp"
#include "fasco/plan.hpp"
#include "fasco/synth.hpp"
#include "fasco/util.hpp"
