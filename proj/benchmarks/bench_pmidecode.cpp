// SPDX-License-Identifier: Apache-2.0
#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "pmidecode/pmidecode.hpp"

using namespace pmidecode;

namespace {

std::vector<double> random_probs(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> p(n);
  double z = 0.0;
  for (auto& x : p) z += (x = expo(rng));
  for (auto& x : p) x /= z;
  return p;
}

std::shared_ptr<const Vocabulary> make_vocab(std::size_t n) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i + 1 < n; ++i) tokens.push_back("t" + std::to_string(i));
  tokens.push_back("</s>");
  return std::make_shared<const Vocabulary>(tokens, static_cast<TokenId>(n - 1));
}

/// Bigram table model with one row per token, plus per-image rows for a VLM.
TableModel bigram_model(std::mt19937_64& rng, std::shared_ptr<const Vocabulary> vocab,
                        const std::vector<std::string>& images) {
  std::vector<TableModel::Entry> entries;
  for (std::size_t t = 0; t < vocab->size(); ++t) {
    const ContextTokens ctx{static_cast<TokenId>(t)};
    entries.push_back({ctx, std::nullopt, TokenDistribution(random_probs(rng, vocab->size()))});
    for (const auto& img : images) entries.push_back({ctx, img, TokenDistribution(random_probs(rng, vocab->size()))});
  }
  return TableModel(vocab, 2, TokenDistribution(random_probs(rng, vocab->size())), std::move(entries),
                    !images.empty());
}

void BM_VlisStepScores(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const TokenDistribution p(random_probs(rng, n)), c(random_probs(rng, n)), m(random_probs(rng, n));
  DecodeConfig cfg;
  cfg.language_temperature = 1.25;
  for (auto _ : state) benchmark::DoNotOptimize(vlis_step_scores(p, c, m, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_VlisStepScores)->RangeMultiplier(8)->Range(64, 32768);

void BM_EstimateMarginal(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  auto vocab = make_vocab(512);
  std::vector<std::string> ids;
  std::vector<ImageContext> images;
  for (std::size_t i = 0; i < k; ++i) {
    ids.push_back("im" + std::to_string(i));
    images.push_back(ImageContext::from_id(ids.back()));
  }
  auto vlm = bigram_model(rng, vocab, ids);
  const ContextTokens ctx{3};
  for (auto _ : state) benchmark::DoNotOptimize(estimate_marginal(vlm, ctx, images));
}
BENCHMARK(BM_EstimateMarginal)->DenseRange(1, 8, 1);

void BM_GreedyDecode(benchmark::State& state) {
  std::mt19937_64 rng(3);
  auto vocab = make_vocab(static_cast<std::size_t>(state.range(0)));
  auto text = bigram_model(rng, vocab, {});
  auto vlm = bigram_model(rng, vocab, {"img", "black", "white"});
  DecodeConfig cfg;
  cfg.max_tokens = 32;
  const Prompt prompt{{0}, std::nullopt, ImageContext::from_id("img")};
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode({&text, &vlm}, prompt, cfg));
}
BENCHMARK(BM_GreedyDecode)->Arg(64)->Arg(512);

void BM_BeamDecode(benchmark::State& state) {
  std::mt19937_64 rng(4);
  auto vocab = make_vocab(256);
  auto text = bigram_model(rng, vocab, {});
  auto vlm = bigram_model(rng, vocab, {"img", "black", "white"});
  DecodeConfig cfg;
  cfg.strategy = Strategy::beam;
  cfg.beam_width = static_cast<std::size_t>(state.range(0));
  cfg.max_tokens = 16;
  cfg.fluency_threshold = 0.0;
  const Prompt prompt{{0}, std::nullopt, ImageContext::from_id("img")};
  for (auto _ : state) benchmark::DoNotOptimize(beam_decode({&text, &vlm}, prompt, cfg));
}
BENCHMARK(BM_BeamDecode)->Arg(1)->Arg(5)->Arg(10);

void BM_Diversity(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<TokenId> tok(0, 50);
  ContextTokens seq(static_cast<std::size_t>(state.range(0)));
  for (auto& t : seq) t = tok(rng);
  for (auto _ : state) benchmark::DoNotOptimize(diversity(seq));
}
BENCHMARK(BM_Diversity)->Arg(128)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
