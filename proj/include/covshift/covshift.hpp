#pragma once

#include "covshift/core.hpp"
#include "covshift/kernels.hpp"
#include "covshift/learners.hpp"
#include "covshift/phi.hpp"
#include "covshift/solver.hpp"
#include "covshift/estimators.hpp"
#include "covshift/inject.hpp"
#include "covshift/evaluate.hpp"
#include "covshift/stats.hpp"
#include "covshift/io.hpp"
#include "covshift/experiment.hpp"
