// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/marginal.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

namespace pmidecode {

std::string_view to_string(MarginalScheme s) {
  return s == MarginalScheme::predefined ? "predefined" : "random_sample";
}

MarginalSpec MarginalSpec::predefined(std::vector<ImageContext> images) {
  MarginalSpec spec;
  spec.images = std::move(images);
  spec.validate();
  return spec;
}

MarginalSpec MarginalSpec::random_sample(const std::filesystem::path& pool_dir, std::size_t count, std::uint64_t seed) {
  std::error_code ec;
  std::vector<std::filesystem::path> pool;
  for (const auto& entry : std::filesystem::directory_iterator(pool_dir, ec)) {
    if (entry.is_regular_file()) pool.push_back(entry.path());
  }
  if (ec) throw ConfigError(fmt::format("cannot list image pool '{}': {}", pool_dir.string(), ec.message()));
  std::sort(pool.begin(), pool.end());
  if (count == 0 || count > pool.size()) {
    throw ConfigError(fmt::format("cannot draw {} images from a pool of {} in '{}'", count, pool.size(), pool_dir.string()));
  }
  // Partial Fisher-Yates so the draw depends only on (pool, seed).
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t span = pool.size() - i;
    const std::size_t j = i + static_cast<std::size_t>(rng() % span);
    std::swap(pool[i], pool[j]);
  }
  MarginalSpec spec;
  spec.scheme = MarginalScheme::random_sample;
  spec.pool_dir = pool_dir.string();
  spec.count = count;
  spec.seed = seed;
  spec.images.clear();
  for (std::size_t i = 0; i < count; ++i) {
    const auto& p = pool[i];
    spec.images.push_back(ImageContext::file("pool:" + p.filename().string(), p.string()));
  }
  return spec;
}

void MarginalSpec::validate() const {
  if (images.empty()) throw ConfigError("marginal image set is empty");
  if (scheme == MarginalScheme::random_sample && !seed) {
    throw ConfigError("random_sample marginal needs a recorded seed");
  }
}

Json to_json(const MarginalSpec& spec) {
  if (spec.scheme == MarginalScheme::random_sample) {
    Json doc{{"scheme", "random_sample"}, {"pool_dir", spec.pool_dir}, {"count", spec.count}};
    if (spec.seed) doc["seed"] = *spec.seed;
    return doc;
  }
  Json images = Json::array();
  for (const auto& img : spec.images) images.push_back(to_json(img));
  return Json{{"scheme", "predefined"}, {"images", images}};
}

MarginalSpec marginal_spec_from_json(const JsonReader& in, const std::filesystem::path& base_dir,
                                     std::uint64_t default_seed) {
  in.check_keys({"scheme", "images", "pool_dir", "count", "seed"});
  const std::string scheme = in.has("scheme") ? in.get_string("scheme") : "predefined";
  if (scheme == "predefined") {
    MarginalSpec spec;
    if (in.has("images")) {
      const auto list = in.child("images");
      spec.images.clear();
      for (std::size_t i = 0; i < list.array_size(); ++i) spec.images.push_back(image_from_json(list.at(i)));
    }
    if (spec.images.empty()) in.fail("predefined marginal set is empty", "images");
    return spec;
  }
  if (scheme == "random_sample") {
    const std::string pool = in.get_string("pool_dir");
    const auto count = in.get_int("count");
    if (count <= 0) in.fail("count must be positive", "count");
    std::uint64_t seed = default_seed;
    if (in.has("seed")) seed = static_cast<std::uint64_t>(in.get_int("seed"));
    std::filesystem::path dir(pool);
    if (dir.is_relative()) dir = base_dir / dir;
    MarginalSpec spec = MarginalSpec::random_sample(dir, static_cast<std::size_t>(count), seed);
    spec.pool_dir = pool;
    if (!in.has("seed")) spec.seed = seed;
    return spec;
  }
  in.fail(fmt::format("unknown marginal scheme '{}'", scheme), "scheme");
}

TokenDistribution estimate_marginal(ModelSource& vlm, const ContextTokens& ctx, std::span<const ImageContext> images) {
  if (images.empty()) throw ConfigError("marginal image set is empty");
  if (!vlm.descriptor().supports_images) {
    throw UsageError(fmt::format("marginal estimation needs an image-capable source, '{}' is text-only",
                                 vlm.descriptor().uri));
  }
  std::vector<double> acc(vlm.vocabulary().size(), 0.0);
  for (const auto& image : images) {
    try {
      const auto d = next_distribution(vlm, ctx, image);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    } catch (Error& e) {
      e.add_context(fmt::format("marginal image '{}'", image.id));
      throw;
    }
  }
  const double k = static_cast<double>(images.size());
  for (double& v : acc) v /= k;
  return TokenDistribution(std::move(acc));
}

TokenDistribution estimate_marginal(ModelSource& vlm, const ContextTokens& ctx, const MarginalSpec& spec) {
  spec.validate();
  return estimate_marginal(vlm, ctx, std::span<const ImageContext>(spec.images));
}

MarginalEstimator::MarginalEstimator(ModelSource& vlm, std::vector<ImageContext> images)
    : vlm_(vlm), images_(std::move(images)) {
  if (images_.empty()) throw ConfigError("marginal image set is empty");
}

TokenDistribution MarginalEstimator::estimate(const ContextTokens& ctx) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(ctx); it != cache_.end()) return it->second;
  }
  TokenDistribution d = estimate_marginal(vlm_, ctx, std::span<const ImageContext>(images_));
  std::lock_guard lock(mutex_);
  return cache_.try_emplace(ctx, std::move(d)).first->second;
}

}  // namespace pmidecode
