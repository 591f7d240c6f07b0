#pragma once

#include "autodiff.hpp"
#include "battery.hpp"
#include "closed_loop.hpp"
#include "common.hpp"
#include "config.hpp"
#include "features.hpp"
#include "harness.hpp"
#include "integrators.hpp"
#include "lqr.hpp"
#include "market.hpp"
#include "ocp.hpp"
#include "parallel.hpp"
#include "pendulum.hpp"
#include "plan.hpp"
#include "policy.hpp"
#include "qp.hpp"
#include "random.hpp"
#include "rl.hpp"
#include "sqp.hpp"
#include "system.hpp"
