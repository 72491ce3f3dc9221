#pragma once

// Interim monitoring for sequential multiple assignment randomized trials
// with survival outcomes: inverse-probability-weighted log-rank and
// score-type statistics over embedded treatment strategies, joint covariance
// across interim analyses, Monte Carlo efficacy boundaries, trial simulation,
// and operating-characteristics evaluation.

#include "smartim/analysis.hpp"
#include "smartim/boundaries.hpp"
#include "smartim/covariance.hpp"
#include "smartim/design.hpp"
#include "smartim/errors.hpp"
#include "smartim/io.hpp"
#include "smartim/rng.hpp"
#include "smartim/simulate.hpp"
#include "smartim/statistics.hpp"
#include "smartim/trial_data.hpp"
#include "smartim/weights.hpp"
