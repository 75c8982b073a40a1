// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pmidecode/pmidecode.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& rel) {
  return std::filesystem::path(PMIDECODE_FIXTURE_DIR) / rel;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pmidecode-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::shared_ptr<const pmidecode::Vocabulary> letters(std::size_t n) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i + 1 < n; ++i) tokens.push_back(std::string(1, static_cast<char>('A' + i)));
  tokens.push_back("</s>");
  return std::make_shared<const pmidecode::Vocabulary>(tokens, static_cast<pmidecode::TokenId>(n - 1));
}

/// Dirichlet(1)-like draw; `zero_prob` puts exact zeros in the mix.
inline std::vector<double> random_probs(std::mt19937_64& rng, std::size_t n, double zero_prob = 0.0) {
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution zero(zero_prob);
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& x : p) {
    x = zero(rng) ? 0.0 : expo(rng);
    sum += x;
  }
  if (sum == 0.0) {
    p[0] = 1.0;
    sum = 1.0;
  }
  for (auto& x : p) x /= sum;
  return p;
}

inline pmidecode::TokenDistribution dist(std::vector<double> p) { return pmidecode::TokenDistribution(std::move(p)); }

inline pmidecode::TableModel constant_model(std::shared_ptr<const pmidecode::Vocabulary> vocab,
                                            std::vector<double> row, bool images = false) {
  return pmidecode::TableModel(std::move(vocab), 1, dist(std::move(row)), {}, images);
}

/// Order-`order` table model with a random row for every context of length
/// order - 1 (and shorter), optionally one row per image on top.
/// `eos_scale` multiplies the eos probability before renormalizing (0 bans eos).
inline pmidecode::TableModel random_table(std::mt19937_64& rng, std::shared_ptr<const pmidecode::Vocabulary> vocab,
                                          std::size_t order, const std::vector<std::string>& images = {},
                                          double eos_scale = 1.0, std::size_t embedding_dim = 0,
                                          bool image_capable = false) {
  using namespace pmidecode;
  auto row = [&] {
    auto p = random_probs(rng, vocab->size());
    p[static_cast<std::size_t>(vocab->eos_id())] *= eos_scale;
    double z = 0.0;
    for (double x : p) z += x;
    for (double& x : p) x /= z;
    return dist(p);
  };
  std::vector<ContextTokens> contexts{{}};
  for (std::size_t len = 1; len < order; ++len) {
    std::vector<ContextTokens> next;
    for (const auto& c : contexts) {
      if (c.size() + 1 != len) continue;
      for (std::size_t t = 0; t < vocab->size(); ++t) {
        auto e = c;
        e.push_back(static_cast<TokenId>(t));
        next.push_back(e);
      }
    }
    contexts.insert(contexts.end(), next.begin(), next.end());
  }
  std::vector<TableModel::Entry> entries;
  for (const auto& c : contexts) {
    if (!c.empty()) entries.push_back({c, std::nullopt, row()});
    for (const auto& img : images) entries.push_back({c, img, row()});
  }
  std::vector<std::vector<double>> emb;
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t t = 0; t < vocab->size() && embedding_dim > 0; ++t) {
    emb.emplace_back(embedding_dim);
    for (auto& x : emb.back()) x = g(rng);
  }
  return TableModel(vocab, order, row(), std::move(entries), image_capable || !images.empty(),
                    std::move(emb));
}

}  // namespace testing
