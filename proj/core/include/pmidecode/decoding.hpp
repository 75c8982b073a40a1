// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pmidecode/core.hpp"
#include "pmidecode/marginal.hpp"
#include "pmidecode/scoring.hpp"
#include "pmidecode/sources.hpp"

namespace pmidecode {

/// The two model roles. `vlm` may be null for text_only runs and `text` for
/// vlm_only runs.
struct ModelPair {
  ModelSource* text = nullptr;
  ModelSource* vlm = nullptr;
};

struct Prompt {
  ContextTokens text;                // prompt seen by the text-only model
  std::optional<ContextTokens> vlm;  // prompt seen by the VLM; defaults to `text`
  std::optional<ImageContext> image;

  const ContextTokens& vlm_tokens() const { return vlm ? *vlm : text; }
};

struct DecodeOptions {
  bool explain = false;  // keep per-step candidate breakdowns
  unsigned threads = 1;  // beam expansion workers, used only with concurrent-safe sources
};

enum class StopReason { eos, max_tokens };

std::string_view to_string(StopReason r);

struct StepSummary {
  TokenId token = 0;
  double log_score = 0.0;
  std::size_t candidates = 0;
  bool fallback = false;

  bool operator==(const StepSummary&) const = default;
};

/// For greedy and contrastive decoding `final_score` is the summed per-step
/// log score; for beam decoding it is the length-normalized ranking score.
struct DecodeResult {
  ContextTokens tokens;  // generated tokens only, eos included when emitted
  std::string text;
  std::vector<StepSummary> per_step;
  double final_score = 0.0;
  StopReason stop_reason = StopReason::max_tokens;
  std::vector<Json> explain;  // one array per step when requested

  bool operator==(const DecodeResult&) const = default;
};

Json to_json(const DecodeResult& result);

/// cum_log_score / length^length_penalty; length counts generated tokens.
/// A zero-length hypothesis ranks by its raw score.
double ranking_score(double cum_log_score, std::size_t length, double length_penalty);

/// Computes StepScores for the active scorer over shared, cached sources.
/// One instance serves one decode call.
class StepScorer {
 public:
  StepScorer(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg);

  /// Scores the next token after `generated` (tokens produced so far).
  StepScores score(const ContextTokens& generated, bool with_components = false);

  /// Embedding of the driving model's state after `prompt + generated`.
  std::vector<double> embedding(const ContextTokens& generated);
  /// Same, for an absolute driving-model context.
  std::vector<double> embedding_at(const ContextTokens& context);

  const Vocabulary& vocabulary() const { return *vocab_; }
  bool concurrent_safe() const;
  const ModelSource& driving_source() const;

 private:
  ContextTokens text_context(const ContextTokens& generated) const;
  ContextTokens vlm_context(const ContextTokens& generated) const;

  const Prompt& prompt_;
  const DecodeConfig& cfg_;
  const Vocabulary* vocab_ = nullptr;
  std::unique_ptr<CachedSource> text_;
  std::unique_ptr<CachedSource> vlm_;
  std::unique_ptr<MarginalEstimator> marginal_;
};

DecodeResult greedy_decode(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg,
                           const DecodeOptions& options = {});

DecodeResult beam_decode(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg,
                         const DecodeOptions& options = {});

/// Candidates are the top-k tokens by score. Each is rated
/// (1 - penalty) * p(v) - penalty * max cosine(h_v, h_j), where p is the
/// score softmax over the fluency candidate set, h_v the driving source's
/// embedding after appending v and h_j the embeddings of every earlier prefix.
DecodeResult contrastive_decode(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg,
                                const DecodeOptions& options = {});

/// Dispatches on cfg.strategy.
DecodeResult decode(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg,
                    const DecodeOptions& options = {});

}  // namespace pmidecode
