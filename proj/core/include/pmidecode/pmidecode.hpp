// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pmidecode/core.hpp"
#include "pmidecode/decoding.hpp"
#include "pmidecode/hash.hpp"
#include "pmidecode/marginal.hpp"
#include "pmidecode/metrics.hpp"
#include "pmidecode/remote.hpp"
#include "pmidecode/scoring.hpp"
#include "pmidecode/serialization.hpp"
#include "pmidecode/sources.hpp"
#include "pmidecode/table_model.hpp"
#include "pmidecode/trace.hpp"
