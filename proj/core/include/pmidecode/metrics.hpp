// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "pmidecode/core.hpp"
#include "pmidecode/serialization.hpp"

namespace pmidecode {

/// 1 - |unique n-grams| / |n-grams|; 0 for sequences shorter than n.
double rep_n(std::span<const TokenId> tokens, std::size_t n);

/// Product of (1 - rep_n) for n = 2, 3, 4.
double diversity(std::span<const TokenId> tokens);

struct MetricsReport {
  double rep_2 = 0.0;
  double rep_3 = 0.0;
  double rep_4 = 0.0;
  double diversity = 1.0;
  std::size_t token_count = 0;
};

MetricsReport compute_metrics(std::span<const TokenId> tokens);
Json to_json(const MetricsReport& report);

}  // namespace pmidecode
