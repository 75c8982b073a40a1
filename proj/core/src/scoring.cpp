// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/scoring.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace pmidecode {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError(fmt::format("temperature must be positive, got {}", tau));
}

void check_same_size(const TokenDistribution& a, const TokenDistribution& b, const char* what) {
  if (a.size() != b.size()) throw DimensionError(fmt::format("{}: sizes {} and {} differ", what, a.size(), b.size()));
}

StepScores masked(std::size_t n, const CandidateSet& cand) {
  StepScores s;
  s.log_scores.assign(n, kNegInf);
  s.candidates = cand.ids;
  s.fallback = cand.fallback;
  return s;
}

}  // namespace

TokenId StepScores::best() const {
  TokenId best = candidates.front();
  for (TokenId id : candidates) {
    if (log_scores[static_cast<std::size_t>(id)] > log_scores[static_cast<std::size_t>(best)]) best = id;
  }
  return best;
}

bool StepScores::is_candidate(TokenId id) const {
  return std::binary_search(candidates.begin(), candidates.end(), id);
}

std::vector<double> log_smooth(const TokenDistribution& d, double tau, double floor) {
  check_tau(tau);
  std::vector<double> out(d.size(), kNegInf);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0.0) out[i] = std::log(std::max(d[i], floor)) / tau;
  }
  // d is already normalized; skipping the shift keeps tau = 1 exactly log d.
  if (tau == 1.0) return out;
  const double log_z = log_sum_exp(out);
  for (double& v : out) v -= log_z;
  return out;
}

TokenDistribution smooth(const TokenDistribution& d, double tau) {
  check_tau(tau);
  if (tau == 1.0) return d;
  auto logs = log_smooth(d, tau, std::numeric_limits<double>::min());
  for (double& v : logs) v = std::exp(v);
  return TokenDistribution(std::move(logs));
}

std::vector<double> pmi_weights(const TokenDistribution& cond, const TokenDistribution& marg, double floor) {
  check_same_size(cond, marg, "pmi_weights");
  std::vector<double> out(cond.size());
  for (std::size_t i = 0; i < cond.size(); ++i) {
    out[i] = std::log(std::max(cond[i], floor)) - std::log(std::max(marg[i], floor));
  }
  return out;
}

CandidateSet fluency_candidates(const TokenDistribution& p, double alpha) {
  CandidateSet out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] >= alpha && p[i] > 0.0) out.ids.push_back(static_cast<TokenId>(i));
  }
  if (out.ids.empty()) {
    out.ids.push_back(argmax(p.probs()));
    out.fallback = true;
  }
  return out;
}

StepScores vlis_step_scores(const TokenDistribution& p_text, const TokenDistribution& cond,
                            const TokenDistribution& marg, const DecodeConfig& cfg, bool with_components) {
  check_same_size(p_text, cond, "vlis_step_scores");
  check_same_size(p_text, marg, "vlis_step_scores");
  const auto log_text = log_smooth(p_text, cfg.language_temperature, cfg.prob_floor);
  const auto pmi = pmi_weights(cond, marg, cfg.prob_floor);
  StepScores s = masked(p_text.size(), fluency_candidates(p_text, cfg.fluency_threshold));
  for (TokenId id : s.candidates) {
    const auto i = static_cast<std::size_t>(id);
    s.log_scores[i] = log_text[i] + pmi[i];
  }
  if (with_components) {
    StepComponents c;
    c.log_text_smoothed = log_text;
    c.pmi = pmi;
    c.log_vlm_conditional.resize(cond.size());
    c.log_vlm_marginal.resize(marg.size());
    for (std::size_t i = 0; i < cond.size(); ++i) {
      c.log_vlm_conditional[i] = std::log(std::max(cond[i], cfg.prob_floor));
      c.log_vlm_marginal[i] = std::log(std::max(marg[i], cfg.prob_floor));
    }
    s.components = std::move(c);
  }
  return s;
}

StepScores naive_ensemble_step_scores(const TokenDistribution& p_text, const TokenDistribution& cond,
                                      const DecodeConfig& cfg) {
  check_same_size(p_text, cond, "naive_ensemble_step_scores");
  StepScores s = masked(p_text.size(), fluency_candidates(p_text, cfg.fluency_threshold));
  for (TokenId id : s.candidates) {
    const auto i = static_cast<std::size_t>(id);
    s.log_scores[i] = std::log(std::max(p_text[i], cfg.prob_floor)) + std::log(std::max(cond[i], cfg.prob_floor));
  }
  return s;
}

StepScores single_model_step_scores(const TokenDistribution& d, const DecodeConfig& cfg) {
  StepScores s = masked(d.size(), fluency_candidates(d, cfg.fluency_threshold));
  for (TokenId id : s.candidates) {
    const auto i = static_cast<std::size_t>(id);
    s.log_scores[i] = std::log(std::max(d[i], cfg.prob_floor));
  }
  return s;
}

Json explain_to_json(const StepScores& scores, const Vocabulary& vocab) {
  Json rows = Json::array();
  for (TokenId id : scores.candidates) {
    const auto i = static_cast<std::size_t>(id);
    Json row{{"token", vocab.token(id)}, {"id", id}, {"score", scores.log_scores[i]}};
    if (scores.components) {
      const auto& c = *scores.components;
      row["p_text_smoothed"] = std::exp(c.log_text_smoothed[i]);
      row["cond"] = std::exp(c.log_vlm_conditional[i]);
      row["marg"] = std::exp(c.log_vlm_marginal[i]);
      row["pmi"] = c.pmi[i];
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace pmidecode
