#pragma once

#include "aggregation.hpp"
#include "client.hpp"
#include "config.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "matrix.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "orchestrator.hpp"
#include "partition.hpp"
#include "prop1.hpp"
#include "pruning.hpp"
#include "rng.hpp"
