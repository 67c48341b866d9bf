#pragma once

#include "sipa/checkpoint.hpp"
#include "sipa/common.hpp"
#include "sipa/cost_model.hpp"
#include "sipa/evaluator.hpp"
#include "sipa/evalset.hpp"
#include "sipa/exit_planner.hpp"
#include "sipa/model_ir.hpp"
#include "sipa/pipeline.hpp"
#include "sipa/prune.hpp"
#include "sipa/report.hpp"
#include "sipa/search.hpp"
#include "sipa/trainmath.hpp"
