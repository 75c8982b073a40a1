// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/metrics.hpp"

#include <algorithm>
#include <vector>

#include <fmt/format.h>

namespace pmidecode {

double rep_n(std::span<const TokenId> tokens, std::size_t n) {
  if (n == 0) throw ValueError("rep_n needs n >= 1");
  if (tokens.size() < n) return 0.0;
  const std::size_t total = tokens.size() - n + 1;
  std::vector<std::span<const TokenId>> grams;
  grams.reserve(total);
  for (std::size_t i = 0; i < total; ++i) grams.push_back(tokens.subspan(i, n));
  auto less = [](std::span<const TokenId> a, std::span<const TokenId> b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  };
  auto eq = [](std::span<const TokenId> a, std::span<const TokenId> b) { return std::equal(a.begin(), a.end(), b.begin()); };
  std::sort(grams.begin(), grams.end(), less);
  const auto unique = static_cast<std::size_t>(std::unique(grams.begin(), grams.end(), eq) - grams.begin());
  return 1.0 - static_cast<double>(unique) / static_cast<double>(total);
}

double diversity(std::span<const TokenId> tokens) {
  double d = 1.0;
  for (std::size_t n = 2; n <= 4; ++n) d *= 1.0 - rep_n(tokens, n);
  return d;
}

MetricsReport compute_metrics(std::span<const TokenId> tokens) {
  MetricsReport r;
  r.rep_2 = rep_n(tokens, 2);
  r.rep_3 = rep_n(tokens, 3);
  r.rep_4 = rep_n(tokens, 4);
  r.diversity = (1.0 - r.rep_2) * (1.0 - r.rep_3) * (1.0 - r.rep_4);
  r.token_count = tokens.size();
  return r;
}

Json to_json(const MetricsReport& report) {
  return Json{{"rep_2", report.rep_2},
              {"rep_3", report.rep_3},
              {"rep_4", report.rep_4},
              {"diversity", report.diversity},
              {"token_count", report.token_count}};
}

}  // namespace pmidecode
