// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "pmidecode/hash.hpp"

namespace pmidecode {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::value: return "value";
    case ErrorCode::config: return "config";
    case ErrorCode::usage: return "usage";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
    case ErrorCode::trace_miss: return "trace_miss";
    case ErrorCode::transport: return "transport";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::session: return "session";
    case ErrorCode::capability: return "capability";
    case ErrorCode::invariant: return "invariant";
  }
  return "unknown";
}

std::string ParseError::format(const std::string& m, const std::string& source, std::size_t line,
                               const std::string& field) {
  std::string out = source.empty() ? std::string("<input>") : source;
  if (line > 0) out += fmt::format(":{}", line);
  if (!field.empty()) out += fmt::format(" at {}", field);
  return out + ": " + m;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> tokens, TokenId eos_id)
    : tokens_(std::move(tokens)), eos_id_(eos_id) {
  if (tokens_.empty()) throw ValueError("vocabulary is empty");
  if (eos_id_ < 0 || static_cast<std::size_t>(eos_id_) >= tokens_.size()) {
    throw ValueError(fmt::format("eos_id {} outside vocabulary of size {}", eos_id_, tokens_.size()));
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw ValueError(fmt::format("duplicate token '{}' at indices {} and {}", tokens_[i],
                                   it->second, i));
    }
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (!contains(id)) throw ValueError(fmt::format("token id {} out of range", id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::check_context(std::span<const TokenId> ids) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!contains(ids[i])) {
      throw ValueError(fmt::format("context position {} holds token id {} outside vocabulary of size {}",
                                   i, ids[i], size()));
    }
  }
}

std::string Vocabulary::render(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == eos_id_) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

ContextTokens Vocabulary::tokenize_words(std::string_view text) const {
  ContextTokens out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    auto id = find(word);
    if (!id) throw ConfigError(fmt::format("word '{}' is not in the vocabulary", word));
    out.push_back(*id);
  }
  return out;
}

std::string Vocabulary::hash() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  joined += std::to_string(eos_id_);
  return sha256_hex(joined);
}

// ---------------------------------------------------------------------------
// Distributions

std::string DistributionViolation::describe() const {
  switch (kind) {
    case ViolationKind::bad_length:
      return fmt::format("length {} does not match vocabulary size", index);
    case ViolationKind::negative_entry:
      return fmt::format("negative entry {} at index {}", value, index);
    case ViolationKind::non_finite_entry:
      return fmt::format("non-finite entry at index {}", index);
    case ViolationKind::bad_sum:
      return fmt::format("sum = {} is outside 1 +/- {}", value, kDistributionTolerance);
  }
  return "unknown violation";
}

std::optional<DistributionViolation> validate_distribution(std::span<const double> probs,
                                                           std::size_t expected_size) {
  if (probs.empty() || (expected_size != 0 && probs.size() != expected_size)) {
    return DistributionViolation{ViolationKind::bad_length, probs.size(), 0.0};
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!std::isfinite(probs[i])) return DistributionViolation{ViolationKind::non_finite_entry, i, probs[i]};
    if (probs[i] < 0.0) return DistributionViolation{ViolationKind::negative_entry, i, probs[i]};
    sum += probs[i];
  }
  if (std::abs(sum - 1.0) > kDistributionTolerance) {
    return DistributionViolation{ViolationKind::bad_sum, 0, sum};
  }
  return std::nullopt;
}

TokenDistribution::TokenDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (auto v = validate_distribution(probs_)) throw ValueError("invalid distribution: " + v->describe());
}

TokenDistribution TokenDistribution::uniform(std::size_t size) {
  return TokenDistribution(std::vector<double>(size, 1.0 / static_cast<double>(size)));
}

double log_sum_exp(std::span<const double> values) {
  double hi = kNegInf;
  for (double v : values) hi = std::max(hi, v);
  if (hi == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

TokenDistribution normalize(std::span<const double> logits, std::size_t expected_size) {
  if (expected_size != 0 && logits.size() != expected_size) {
    throw DimensionError(fmt::format("got {} logits for vocabulary size {}", logits.size(), expected_size));
  }
  if (logits.empty()) throw DimensionError("cannot normalize an empty logit vector");
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw ValueError(fmt::format("non-finite logit at index {}", i));
  }
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - hi);
    z += probs[i];
  }
  for (double& p : probs) p /= z;
  return TokenDistribution(std::move(probs));
}

TokenId argmax(std::span<const double> values) {
  if (values.empty()) return -1;
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

// ---------------------------------------------------------------------------
// Images and configuration

std::string_view to_string(ImageKind kind) {
  switch (kind) {
    case ImageKind::file: return "file";
    case ImageKind::builtin_black: return "builtin-black";
    case ImageKind::builtin_white: return "builtin-white";
    case ImageKind::synthetic: return "synthetic";
  }
  return "unknown";
}

ImageContext ImageContext::synthetic(std::string id) {
  if (id.empty()) throw ValueError("image id must be non-empty");
  if (id == "black" || id == "white") {
    throw ValueError(fmt::format("image id '{}' is reserved for the builtin image", id));
  }
  return {std::move(id), ImageKind::synthetic, {}};
}

ImageContext ImageContext::file(std::string id, std::string path) {
  if (id.empty()) throw ValueError("image id must be non-empty");
  if (id == "black" || id == "white") {
    throw ValueError(fmt::format("image id '{}' is reserved for the builtin image", id));
  }
  if (path.empty()) throw ValueError(fmt::format("file image '{}' has no path", id));
  return {std::move(id), ImageKind::file, std::move(path)};
}

ImageContext ImageContext::from_id(std::string id) {
  if (id == "black") return black();
  if (id == "white") return white();
  return synthetic(std::move(id));
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::greedy: return "greedy";
    case Strategy::beam: return "beam";
    case Strategy::contrastive: return "contrastive";
  }
  return "unknown";
}

std::string_view to_string(ScorerKind s) {
  switch (s) {
    case ScorerKind::vlis: return "vlis";
    case ScorerKind::naive_ensemble: return "naive_ensemble";
    case ScorerKind::vlm_only: return "vlm_only";
    case ScorerKind::text_only: return "text_only";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "greedy") return Strategy::greedy;
  if (s == "beam") return Strategy::beam;
  if (s == "contrastive") return Strategy::contrastive;
  throw ConfigError(fmt::format("unknown strategy '{}'", s));
}

ScorerKind parse_scorer(std::string_view s) {
  if (s == "vlis") return ScorerKind::vlis;
  if (s == "naive_ensemble") return ScorerKind::naive_ensemble;
  if (s == "vlm_only") return ScorerKind::vlm_only;
  if (s == "text_only") return ScorerKind::text_only;
  throw ConfigError(fmt::format("unknown scorer '{}'", s));
}

void DecodeConfig::validate() const {
  if (!(language_temperature > 0.0) || !std::isfinite(language_temperature)) {
    throw ConfigError(fmt::format("language_temperature must be positive, got {}", language_temperature));
  }
  if (!(fluency_threshold >= 0.0 && fluency_threshold < 1.0)) {
    throw ConfigError(fmt::format("fluency_threshold must lie in [0, 1), got {}", fluency_threshold));
  }
  if (beam_width == 0) throw ConfigError("beam_width must be positive");
  if (!std::isfinite(length_penalty)) throw ConfigError("length_penalty must be finite");
  if (!(contrastive_penalty >= 0.0 && contrastive_penalty <= 1.0)) {
    throw ConfigError(fmt::format("contrastive_penalty must lie in [0, 1], got {}", contrastive_penalty));
  }
  if (contrastive_topk == 0) throw ConfigError("contrastive_topk must be positive");
  if (!(prob_floor > 0.0) || prob_floor >= 1.0) {
    throw ConfigError(fmt::format("prob_floor must lie in (0, 1), got {}", prob_floor));
  }
  if (scorer == ScorerKind::vlis && marginal_images.empty()) {
    throw ConfigError("the vlis scorer needs at least one marginal image");
  }
  for (const auto& img : marginal_images) {
    if (img.id.empty()) throw ConfigError("marginal image with empty id");
  }
}

DecodeConfig preset(std::string_view name) {
  DecodeConfig cfg;
  if (name == "default") return cfg;
  if (name == "vqa" || name == "okvqa" || name == "vqav2" || name == "scienceqa") {
    cfg.language_temperature = 1.25;
    cfg.length_penalty = -1.0;
    return cfg;
  }
  if (name == "concadia") {
    cfg.language_temperature = 0.67;
    cfg.length_penalty = -2.0;
    return cfg;
  }
  if (name == "paragraph_captioning") {
    cfg.language_temperature = 0.67;
    cfg.length_penalty = 1.0;
    cfg.strategy = Strategy::contrastive;
    cfg.contrastive_penalty = 0.6;
    return cfg;
  }
  if (name == "flan_t5") {
    cfg.language_temperature = 0.9;
    cfg.fluency_threshold = 0.0001;
    cfg.length_penalty = -1.0;
    return cfg;
  }
  throw ConfigError(fmt::format("unknown preset '{}'", name));
}

}  // namespace pmidecode
