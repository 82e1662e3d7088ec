#pragma once

// Umbrella header.

#include "bayeswork/analyze.hpp"
#include "bayeswork/checks.hpp"
#include "bayeswork/compare.hpp"
#include "bayeswork/csv.hpp"
#include "bayeswork/data.hpp"
#include "bayeswork/diagnostics.hpp"
#include "bayeswork/io.hpp"
#include "bayeswork/math.hpp"
#include "bayeswork/model.hpp"
#include "bayeswork/random.hpp"
#include "bayeswork/sampler.hpp"
#include "bayeswork/svg.hpp"
#include "bayeswork/workflow.hpp"
