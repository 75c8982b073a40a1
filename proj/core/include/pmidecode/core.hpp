// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pmidecode/error.hpp"

namespace pmidecode {

using TokenId = std::int32_t;
using ContextTokens = std::vector<TokenId>;

inline constexpr double kDistributionTolerance = 1e-6;
inline constexpr double kDefaultProbFloor = 1e-12;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Dense token inventory. Indices are 0..size-1, strings are unique.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> tokens, TokenId eos_id);

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId eos_id() const noexcept { return eos_id_; }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::optional<TokenId> find(std::string_view token) const;

  bool contains(TokenId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < tokens_.size();
  }

  /// Throws ValueError naming the first out-of-range id.
  void check_context(std::span<const TokenId> ids) const;

  /// Space-joined token strings, eos omitted.
  std::string render(std::span<const TokenId> ids) const;

  /// Splits on whitespace and maps each word to a token id.
  ContextTokens tokenize_words(std::string_view text) const;

  /// Lowercase hex SHA-256 of the tokens joined by '\n', then '\n' and the eos id.
  std::string hash() const;

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && eos_id_ == other.eos_id_;
  }

 private:
  std::vector<std::string> tokens_;
  TokenId eos_id_;
  std::unordered_map<std::string, TokenId> index_;
};

enum class ViolationKind { bad_length, negative_entry, non_finite_entry, bad_sum };

struct DistributionViolation {
  ViolationKind kind;
  std::size_t index = 0;  // offending entry for per-entry violations
  double value = 0.0;     // offending entry, or the sum for bad_sum
  std::string describe() const;
};

/// Reports the first violated invariant, or nullopt when `probs` is a valid
/// distribution of length `expected_size` (0 skips the length check).
std::optional<DistributionViolation> validate_distribution(std::span<const double> probs,
                                                           std::size_t expected_size = 0);

/// Normalized next-token probability vector. Always valid by construction.
class TokenDistribution {
 public:
  /// Validates and throws ValueError on violation.
  explicit TokenDistribution(std::vector<double> probs);

  static TokenDistribution uniform(std::size_t size);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }
  const std::vector<double>& vector() const noexcept { return probs_; }

  bool operator==(const TokenDistribution&) const = default;

 private:
  std::vector<double> probs_;
};

/// Softmax with max shift. Throws DimensionError if `expected_size` is non-zero
/// and differs from logits.size(); ValueError on non-finite entries.
TokenDistribution normalize(std::span<const double> logits, std::size_t expected_size = 0);

/// Index of the largest entry, lowest index on ties. Empty input returns -1.
TokenId argmax(std::span<const double> values);

double log_sum_exp(std::span<const double> values);

enum class ImageKind { file, builtin_black, builtin_white, synthetic };

std::string_view to_string(ImageKind kind);

/// Opaque handle for an image the VLM source can condition on.
struct ImageContext {
  std::string id;
  ImageKind kind = ImageKind::synthetic;
  std::string path;  // set for file images

  static ImageContext black() { return {"black", ImageKind::builtin_black, {}}; }
  static ImageContext white() { return {"white", ImageKind::builtin_white, {}}; }
  static ImageContext synthetic(std::string id);
  static ImageContext file(std::string id, std::string path);

  /// "black"/"white" map to the builtins, anything else to a synthetic id.
  static ImageContext from_id(std::string id);

  bool operator==(const ImageContext&) const = default;
};

enum class Strategy { greedy, beam, contrastive };
enum class ScorerKind { vlis, naive_ensemble, vlm_only, text_only };

std::string_view to_string(Strategy s);
std::string_view to_string(ScorerKind s);
Strategy parse_strategy(std::string_view s);
ScorerKind parse_scorer(std::string_view s);

struct DecodeConfig {
  double language_temperature = 1.0;
  double fluency_threshold = 0.001;
  Strategy strategy = Strategy::beam;
  std::size_t beam_width = 5;
  double length_penalty = 1.0;
  std::size_t max_tokens = 32;
  double contrastive_penalty = 0.6;
  std::size_t contrastive_topk = 5;
  std::vector<ImageContext> marginal_images{ImageContext::black(), ImageContext::white()};
  ScorerKind scorer = ScorerKind::vlis;
  double prob_floor = kDefaultProbFloor;

  /// Throws ConfigError on the first violated constraint.
  void validate() const;

  bool operator==(const DecodeConfig&) const = default;
};

/// Named hyperparameter sets for the evaluated task families.
DecodeConfig preset(std::string_view name);

struct Hypothesis {
  ContextTokens tokens;
  double cum_log_score = 0.0;
  bool finished = false;
};

}  // namespace pmidecode
