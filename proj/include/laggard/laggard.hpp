#pragma once

#include "laggard/archive.hpp"
#include "laggard/data_model.hpp"
#include "laggard/diagnostics.hpp"
#include "laggard/dlm_tree.hpp"
#include "laggard/engine.hpp"
#include "laggard/error.hpp"
#include "laggard/inference.hpp"
#include "laggard/model.hpp"
#include "laggard/modifier_tree.hpp"
#include "laggard/polya_gamma.hpp"
#include "laggard/report.hpp"
#include "laggard/rng.hpp"
#include "laggard/server.hpp"
#include "laggard/simulate.hpp"
#include "laggard/stats.hpp"
#include "laggard/table.hpp"
