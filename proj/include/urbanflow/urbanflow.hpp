#pragma once

#include "urbanflow/corr_density.hpp"
#include "urbanflow/coupling.hpp"
#include "urbanflow/empirics.hpp"
#include "urbanflow/error.hpp"
#include "urbanflow/fitting.hpp"
#include "urbanflow/ingest.hpp"
#include "urbanflow/nls.hpp"
#include "urbanflow/random.hpp"
#include "urbanflow/simulate.hpp"
#include "urbanflow/stats.hpp"
