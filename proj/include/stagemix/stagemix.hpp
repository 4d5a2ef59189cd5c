#pragma once

#include "stagemix/dynamics.hpp"
#include "stagemix/dynamics_io.hpp"
#include "stagemix/error.hpp"
#include "stagemix/metrics.hpp"
#include "stagemix/metrics_io.hpp"
#include "stagemix/philox.hpp"
#include "stagemix/sampler.hpp"
#include "stagemix/schedule.hpp"
#include "stagemix/schedule_io.hpp"
#include "stagemix/simulator.hpp"
