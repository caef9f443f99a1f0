// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "coe/baselines.hpp"
#include "coe/cost_model.hpp"
#include "coe/engine.hpp"
#include "coe/experiment.hpp"
#include "coe/expert_manager.hpp"
#include "coe/presets.hpp"
#include "coe/profiler.hpp"
#include "coe/random.hpp"
#include "coe/routing.hpp"
#include "coe/scheduler.hpp"
#include "coe/serialization.hpp"
#include "coe/types.hpp"
#include "coe/workload.hpp"
