// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <future>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pmidecode {

std::string_view to_string(StopReason r) { return r == StopReason::eos ? "eos" : "max_tokens"; }

Json to_json(const DecodeResult& result) {
  Json steps = Json::array();
  for (const auto& s : result.per_step) {
    steps.push_back(Json{{"token", s.token}, {"log_score", s.log_score}, {"candidates", s.candidates},
                         {"fallback", s.fallback}});
  }
  Json doc{{"tokens", result.tokens},
           {"text", result.text},
           {"final_score", result.final_score},
           {"stop_reason", std::string(to_string(result.stop_reason))},
           {"per_step", steps}};
  if (!result.explain.empty()) doc["explain"] = result.explain;
  return doc;
}

double ranking_score(double cum_log_score, std::size_t length, double length_penalty) {
  if (length == 0) return cum_log_score;
  return cum_log_score / std::pow(static_cast<double>(length), length_penalty);
}

// ---------------------------------------------------------------------------
// StepScorer

namespace {

bool needs_text(ScorerKind k) { return k != ScorerKind::vlm_only; }
bool needs_vlm(ScorerKind k) { return k != ScorerKind::text_only; }

ContextTokens concat(const ContextTokens& a, const ContextTokens& b) {
  ContextTokens out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

StepScorer::StepScorer(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg)
    : prompt_(prompt), cfg_(cfg) {
  cfg_.validate();
  if (needs_text(cfg.scorer)) {
    if (!sources.text) throw ConfigError(fmt::format("scorer {} needs a text source", to_string(cfg.scorer)));
    text_ = std::make_unique<CachedSource>(*sources.text);
    vocab_ = &sources.text->vocabulary();
  }
  if (needs_vlm(cfg.scorer)) {
    if (!sources.vlm) throw ConfigError(fmt::format("scorer {} needs a VLM source", to_string(cfg.scorer)));
    vlm_ = std::make_unique<CachedSource>(*sources.vlm);
    if (vocab_ && !(sources.vlm->vocabulary() == *vocab_)) {
      throw ConfigError("text and VLM sources use different vocabularies");
    }
    vocab_ = &sources.vlm->vocabulary();
    if ((cfg.scorer == ScorerKind::vlis || prompt.image) && !sources.vlm->descriptor().supports_images) {
      throw ConfigError(fmt::format("VLM source '{}' does not accept images", sources.vlm->descriptor().uri));
    }
    if (cfg.scorer == ScorerKind::vlis) {
      marginal_ = std::make_unique<MarginalEstimator>(*vlm_, cfg.marginal_images);
    }
  }
  if (prompt.text.empty() && needs_text(cfg.scorer)) throw UsageError("prompt is empty");
  if (prompt.vlm_tokens().empty() && needs_vlm(cfg.scorer)) throw UsageError("VLM prompt is empty");
  vocab_->check_context(prompt.text);
  vocab_->check_context(prompt.vlm_tokens());
}

ContextTokens StepScorer::text_context(const ContextTokens& generated) const { return concat(prompt_.text, generated); }

ContextTokens StepScorer::vlm_context(const ContextTokens& generated) const {
  return concat(prompt_.vlm_tokens(), generated);
}

bool StepScorer::concurrent_safe() const {
  return (!text_ || text_->concurrent_safe()) && (!vlm_ || vlm_->concurrent_safe());
}

const ModelSource& StepScorer::driving_source() const {
  return cfg_.scorer == ScorerKind::vlm_only ? vlm_->inner() : text_->inner();
}

StepScores StepScorer::score(const ContextTokens& generated, bool with_components) {
  switch (cfg_.scorer) {
    case ScorerKind::vlis: {
      const auto p_text = next_distribution(*text_, text_context(generated));
      const auto vctx = vlm_context(generated);
      const auto cond = next_distribution(*vlm_, vctx, prompt_.image);
      const auto marg = marginal_->estimate(vctx);
      return vlis_step_scores(p_text, cond, marg, cfg_, with_components);
    }
    case ScorerKind::naive_ensemble: {
      const auto p_text = next_distribution(*text_, text_context(generated));
      const auto cond = next_distribution(*vlm_, vlm_context(generated), prompt_.image);
      return naive_ensemble_step_scores(p_text, cond, cfg_);
    }
    case ScorerKind::vlm_only:
      return single_model_step_scores(next_distribution(*vlm_, vlm_context(generated), prompt_.image), cfg_);
    case ScorerKind::text_only:
      return single_model_step_scores(next_distribution(*text_, text_context(generated)), cfg_);
  }
  throw InvariantError("unhandled scorer");
}

std::vector<double> StepScorer::embedding(const ContextTokens& generated) {
  return embedding_at(cfg_.scorer == ScorerKind::vlm_only ? vlm_context(generated) : text_context(generated));
}

std::vector<double> StepScorer::embedding_at(const ContextTokens& context) {
  if (cfg_.scorer == ScorerKind::vlm_only) return *vlm_->next(SourceQuery{context, prompt_.image, true}).embedding;
  return *text_->next(SourceQuery{context, std::nullopt, true}).embedding;
}

// ---------------------------------------------------------------------------
// Greedy

namespace {

StepScores score_step(StepScorer& scorer, const ContextTokens& generated, const DecodeOptions& options,
                      std::size_t step) {
  try {
    return scorer.score(generated, options.explain);
  } catch (Error& e) {
    e.add_context(fmt::format("step {}", step));
    throw;
  }
}

StepSummary summarize(const StepScores& s, TokenId token) {
  return StepSummary{token, s.log_scores[static_cast<std::size_t>(token)], s.candidates.size(), s.fallback};
}

}  // namespace

DecodeResult greedy_decode(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg,
                           const DecodeOptions& options) {
  StepScorer scorer(sources, prompt, cfg);
  const auto& vocab = scorer.vocabulary();
  DecodeResult result;
  for (std::size_t step = 0; step < cfg.max_tokens; ++step) {
    const StepScores s = score_step(scorer, result.tokens, options, step);
    const TokenId tok = s.best();
    result.per_step.push_back(summarize(s, tok));
    result.final_score += result.per_step.back().log_score;
    if (options.explain) result.explain.push_back(explain_to_json(s, vocab));
    result.tokens.push_back(tok);
    if (tok == vocab.eos_id()) {
      result.stop_reason = StopReason::eos;
      break;
    }
  }
  result.text = vocab.render(result.tokens);
  return result;
}

// ---------------------------------------------------------------------------
// Beam

namespace {

struct BeamEntry {
  Hypothesis hyp;
  double rank = 0.0;
  std::vector<StepSummary> steps;
  std::vector<Json> explain;
};

bool ranks_before(const BeamEntry& a, const BeamEntry& b) {
  if (a.rank != b.rank) return a.rank > b.rank;
  return a.hyp.tokens < b.hyp.tokens;
}

}  // namespace

DecodeResult beam_decode(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg,
                         const DecodeOptions& options) {
  StepScorer scorer(sources, prompt, cfg);
  const auto& vocab = scorer.vocabulary();
  const bool parallel = options.threads > 1 && scorer.concurrent_safe();

  std::vector<BeamEntry> pool(1);
  pool[0].hyp.finished = cfg.max_tokens == 0;

  for (std::size_t step = 0; step < cfg.max_tokens; ++step) {
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (!pool[i].hyp.finished) alive.push_back(i);
    }
    if (alive.empty()) break;

    std::vector<std::optional<StepScores>> scores(alive.size());
    if (parallel) {
      std::vector<std::future<StepScores>> jobs;
      for (std::size_t a = 0; a < alive.size(); ++a) {
        jobs.push_back(std::async(std::launch::async, [&, a] {
          return score_step(scorer, pool[alive[a]].hyp.tokens, options, step);
        }));
      }
      for (std::size_t a = 0; a < alive.size(); ++a) scores[a] = jobs[a].get();
    } else {
      for (std::size_t a = 0; a < alive.size(); ++a) scores[a] = score_step(scorer, pool[alive[a]].hyp.tokens, options, step);
    }

    std::vector<BeamEntry> next;
    for (const auto& e : pool) {
      if (e.hyp.finished) next.push_back(e);
    }
    for (std::size_t a = 0; a < alive.size(); ++a) {
      const BeamEntry& parent = pool[alive[a]];
      const StepScores& s = *scores[a];
      for (TokenId tok : s.candidates) {
        BeamEntry child;
        child.hyp.tokens = parent.hyp.tokens;
        child.hyp.tokens.push_back(tok);
        child.steps = parent.steps;
        child.steps.push_back(summarize(s, tok));
        child.hyp.cum_log_score = parent.hyp.cum_log_score + child.steps.back().log_score;
        child.hyp.finished = tok == vocab.eos_id() || child.hyp.tokens.size() == cfg.max_tokens;
        child.rank = ranking_score(child.hyp.cum_log_score, child.hyp.tokens.size(), cfg.length_penalty);
        if (options.explain) {
          child.explain = parent.explain;
          child.explain.push_back(explain_to_json(s, vocab));
        }
        next.push_back(std::move(child));
      }
    }
    const std::size_t keep = std::min(cfg.beam_width, next.size());
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(), ranks_before);
    next.resize(keep);
    pool = std::move(next);
    spdlog::trace("beam step {}: {} hypotheses, best rank {}", step, pool.size(), pool.front().rank);
  }

  const BeamEntry& best = pool.front();
  DecodeResult result;
  result.tokens = best.hyp.tokens;
  result.per_step = best.steps;
  result.explain = best.explain;
  result.final_score = best.rank;
  result.stop_reason = !result.tokens.empty() && result.tokens.back() == vocab.eos_id() ? StopReason::eos
                                                                                        : StopReason::max_tokens;
  result.text = vocab.render(result.tokens);
  return result;
}

// ---------------------------------------------------------------------------
// Contrastive

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

DecodeResult contrastive_decode(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg,
                                const DecodeOptions& options) {
  StepScorer scorer(sources, prompt, cfg);
  const auto& vocab = scorer.vocabulary();
  const auto& driver = scorer.driving_source();
  if (!driver.descriptor().supports_embeddings) {
    throw CapabilityError(
        fmt::format("contrastive decoding needs embeddings, source '{}' provides none", driver.descriptor().uri));
  }
  const double penalty = cfg.contrastive_penalty;
  const ContextTokens& driving_prompt = cfg.scorer == ScorerKind::vlm_only ? prompt.vlm_tokens() : prompt.text;

  // Embeddings of every prefix of the driving context, prompt included.
  std::vector<std::vector<double>> history;
  for (std::size_t j = 1; j <= driving_prompt.size(); ++j) {
    history.push_back(
        scorer.embedding_at(ContextTokens(driving_prompt.begin(), driving_prompt.begin() + static_cast<std::ptrdiff_t>(j))));
  }

  DecodeResult result;
  for (std::size_t step = 0; step < cfg.max_tokens; ++step) {
    const StepScores s = score_step(scorer, result.tokens, options, step);
    std::vector<double> cand_scores;
    for (TokenId id : s.candidates) cand_scores.push_back(s.log_scores[static_cast<std::size_t>(id)]);
    const double log_z = log_sum_exp(cand_scores);

    std::vector<TokenId> ranked = s.candidates;
    std::stable_sort(ranked.begin(), ranked.end(), [&](TokenId a, TokenId b) {
      return s.log_scores[static_cast<std::size_t>(a)] > s.log_scores[static_cast<std::size_t>(b)];
    });
    ranked.resize(std::min(ranked.size(), cfg.contrastive_topk));

    TokenId chosen = ranked.front();
    double chosen_value = -std::numeric_limits<double>::infinity();
    std::vector<double> chosen_embedding;
    for (TokenId v : ranked) {
      ContextTokens extended = result.tokens;
      extended.push_back(v);
      std::vector<double> h;
      try {
        h = scorer.embedding(extended);
      } catch (Error& e) {
        e.add_context(fmt::format("step {}", step));
        throw;
      }
      double sim = -std::numeric_limits<double>::infinity();
      for (const auto& g : history) sim = std::max(sim, cosine(h, g));
      if (history.empty()) sim = 0.0;
      const double confidence = std::exp(s.log_scores[static_cast<std::size_t>(v)] - log_z);
      const double value = (1.0 - penalty) * confidence - penalty * sim;
      if (value > chosen_value || (value == chosen_value && v < chosen)) {
        chosen = v;
        chosen_value = value;
        chosen_embedding = std::move(h);
      }
    }
    result.per_step.push_back(summarize(s, chosen));
    result.final_score += result.per_step.back().log_score;
    if (options.explain) result.explain.push_back(explain_to_json(s, vocab));
    result.tokens.push_back(chosen);
    history.push_back(std::move(chosen_embedding));
    if (chosen == vocab.eos_id()) {
      result.stop_reason = StopReason::eos;
      break;
    }
  }
  result.text = vocab.render(result.tokens);
  return result;
}

DecodeResult decode(const ModelPair& sources, const Prompt& prompt, const DecodeConfig& cfg,
                    const DecodeOptions& options) {
  switch (cfg.strategy) {
    case Strategy::greedy: return greedy_decode(sources, prompt, cfg, options);
    case Strategy::beam: return beam_decode(sources, prompt, cfg, options);
    case Strategy::contrastive: return contrastive_decode(sources, prompt, cfg, options);
  }
  throw InvariantError("unhandled strategy");
}

}  // namespace pmidecode
