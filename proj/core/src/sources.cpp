// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/sources.hpp"

#include <fmt/format.h>

namespace pmidecode {

std::string_view to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::table: return "table";
    case SourceKind::trace: return "trace";
    case SourceKind::remote: return "remote";
  }
  return "unknown";
}

SourceKind parse_source_kind(std::string_view s) {
  if (s == "table") return SourceKind::table;
  if (s == "trace") return SourceKind::trace;
  if (s == "remote") return SourceKind::remote;
  throw ConfigError(fmt::format("unknown source kind '{}'", s));
}

QueryKey QueryKey::of(const SourceQuery& q) {
  QueryKey key{q.context, std::nullopt};
  if (q.image) key.image_id = q.image->id;
  return key;
}

SourceOutput ModelSource::next(const SourceQuery& q) {
  const auto& desc = descriptor();
  vocabulary().check_context(q.context);
  if (q.image && !desc.supports_images) {
    throw UsageError(fmt::format("image '{}' passed to text-only source '{}'", q.image->id, desc.uri));
  }
  if (q.want_embedding && !desc.supports_embeddings) {
    throw CapabilityError(fmt::format("source '{}' does not provide embeddings", desc.uri));
  }
  SourceOutput out = query(q);
  if (out.distribution.size() != vocabulary().size()) {
    throw InvariantError(fmt::format("source '{}' returned {} probabilities for vocabulary size {}",
                                     desc.uri, out.distribution.size(), vocabulary().size()));
  }
  if (q.want_embedding && !out.embedding) {
    throw CapabilityError(fmt::format("source '{}' returned no embedding", desc.uri));
  }
  return out;
}

TokenDistribution next_distribution(ModelSource& source, const ContextTokens& ctx,
                                    const std::optional<ImageContext>& image) {
  return source.next(SourceQuery{ctx, image, false}).distribution;
}

SourceOutput CountingSource::query(const SourceQuery& q) {
  count_.fetch_add(1);
  return inner_.next(q);
}

std::size_t CachedSource::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

SourceOutput CachedSource::query(const SourceQuery& q) {
  const QueryKey key = QueryKey::of(q);
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end() && (!q.want_embedding || it->second.embedding)) return it->second;
  }
  std::optional<SourceOutput> fresh;
  if (inner_.concurrent_safe()) {
    fresh.emplace(inner_.next(q));
  } else {
    std::lock_guard inner_lock(inner_mutex_);
    fresh.emplace(inner_.next(q));
  }
  std::lock_guard lock(mutex_);
  auto [it, inserted] = cache_.try_emplace(key, *fresh);
  if (!inserted && fresh->embedding && !it->second.embedding) it->second = *fresh;
  return it->second;
}

}  // namespace pmidecode
