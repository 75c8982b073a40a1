// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "pmidecode/serialization.hpp"
#include "pmidecode/sources.hpp"

namespace pmidecode {

enum class MarginalScheme { predefined, random_sample };

std::string_view to_string(MarginalScheme s);

/// The proxy image set used to approximate the VLM's image-free marginal.
struct MarginalSpec {
  MarginalScheme scheme = MarginalScheme::predefined;
  std::vector<ImageContext> images{ImageContext::black(), ImageContext::white()};
  // random_sample only
  std::string pool_dir;
  std::size_t count = 0;
  std::optional<std::uint64_t> seed;

  static MarginalSpec predefined(std::vector<ImageContext> images);

  /// Draws `count` files from `pool_dir` (sorted by name) without replacement.
  static MarginalSpec random_sample(const std::filesystem::path& pool_dir, std::size_t count, std::uint64_t seed);

  /// Throws ConfigError when empty or when random_sample lacks its seed.
  void validate() const;

  bool operator==(const MarginalSpec&) const = default;
};

Json to_json(const MarginalSpec& spec);
/// Parses the config form. random_sample specs are drawn immediately;
/// relative pool paths resolve against `base_dir`. `default_seed` applies
/// when the block carries no seed of its own.
MarginalSpec marginal_spec_from_json(const JsonReader& in, const std::filesystem::path& base_dir,
                                     std::uint64_t default_seed);

/// Arithmetic mean of the conditionals p(. | ctx, image_i) over the listed
/// images, in probability space. Source errors are tagged with the image id.
TokenDistribution estimate_marginal(ModelSource& vlm, const ContextTokens& ctx, const MarginalSpec& spec);
TokenDistribution estimate_marginal(ModelSource& vlm, const ContextTokens& ctx, std::span<const ImageContext> images);

/// estimate_marginal with a per-context cache, for the lifetime of one decode.
class MarginalEstimator {
 public:
  MarginalEstimator(ModelSource& vlm, std::vector<ImageContext> images);

  TokenDistribution estimate(const ContextTokens& ctx);

 private:
  ModelSource& vlm_;
  std::vector<ImageContext> images_;
  std::mutex mutex_;
  std::map<ContextTokens, TokenDistribution> cache_;
};

}  // namespace pmidecode
