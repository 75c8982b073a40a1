// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "pmidecode/core.hpp"
#include "pmidecode/serialization.hpp"

namespace pmidecode {

/// Per-token breakdown of a VLIS step, all in natural-log space.
struct StepComponents {
  std::vector<double> log_text_smoothed;
  std::vector<double> log_vlm_conditional;
  std::vector<double> log_vlm_marginal;
  std::vector<double> pmi;
};

/// Per-token scores for one decoding step. Masked tokens hold -inf and are
/// absent from `candidates`, which is sorted ascending and never empty.
struct StepScores {
  std::vector<double> log_scores;
  std::vector<TokenId> candidates;
  bool fallback = false;  // the fluency mask was empty and argmax p_text was kept
  std::optional<StepComponents> components;

  /// Highest-scoring candidate, lowest index on ties.
  TokenId best() const;
  bool is_candidate(TokenId id) const;
};

struct CandidateSet {
  std::vector<TokenId> ids;
  bool fallback = false;
};

/// p^(1/tau), renormalized. Zero entries stay zero.
TokenDistribution smooth(const TokenDistribution& d, double tau);

/// Natural log of smooth(d, tau), computed without leaving log space.
std::vector<double> log_smooth(const TokenDistribution& d, double tau, double floor = kDefaultProbFloor);

/// log(max(cond, floor)) - log(max(marg, floor)), entry-wise.
std::vector<double> pmi_weights(const TokenDistribution& cond, const TokenDistribution& marg,
                                double floor = kDefaultProbFloor);

/// {i : p(i) >= alpha and p(i) > 0}; {argmax p} when that set is empty.
CandidateSet fluency_candidates(const TokenDistribution& p, double alpha);

StepScores vlis_step_scores(const TokenDistribution& p_text, const TokenDistribution& cond,
                            const TokenDistribution& marg, const DecodeConfig& cfg, bool with_components = false);

/// log p_text + log cond under the text fluency mask.
StepScores naive_ensemble_step_scores(const TokenDistribution& p_text, const TokenDistribution& cond,
                                      const DecodeConfig& cfg);

/// log d under the fluency mask of d itself.
StepScores single_model_step_scores(const TokenDistribution& d, const DecodeConfig& cfg);

/// One record per candidate: token, smoothed p_text, cond, marg, pmi, score.
Json explain_to_json(const StepScores& scores, const Vocabulary& vocab);

}  // namespace pmidecode
