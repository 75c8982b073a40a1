// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pmidecode/core.hpp"

namespace pmidecode {

enum class SourceKind { table, trace, remote };

std::string_view to_string(SourceKind kind);
SourceKind parse_source_kind(std::string_view s);

struct ModelSourceDescriptor {
  SourceKind kind = SourceKind::table;
  std::string uri;
  bool supports_images = false;
  bool supports_embeddings = false;

  bool operator==(const ModelSourceDescriptor&) const = default;
};

struct SourceQuery {
  ContextTokens context;
  std::optional<ImageContext> image;
  bool want_embedding = false;
};

struct SourceOutput {
  TokenDistribution distribution;
  std::optional<std::vector<double>> embedding;
};

/// Key identifying a query for caches and traces: exact context plus image id.
struct QueryKey {
  ContextTokens context;
  std::optional<std::string> image_id;

  static QueryKey of(const SourceQuery& q);
  auto operator<=>(const QueryKey&) const = default;
};

/// Provider of next-token distributions.
///
/// next() enforces the boundary contract shared by every implementation:
/// images only reach image-capable sources, embeddings only come from
/// embedding-capable ones, context ids are in range, and every returned
/// distribution matches the vocabulary size.
class ModelSource {
 public:
  virtual ~ModelSource() = default;

  virtual const ModelSourceDescriptor& descriptor() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;

  /// True when next() may be called from several threads at once.
  virtual bool concurrent_safe() const { return false; }

  SourceOutput next(const SourceQuery& query);

 protected:
  virtual SourceOutput query(const SourceQuery& query) = 0;
};

TokenDistribution next_distribution(ModelSource& source, const ContextTokens& ctx,
                                    const std::optional<ImageContext>& image = std::nullopt);

/// Base for sources that forward to another source.
class SourceDecorator : public ModelSource {
 public:
  explicit SourceDecorator(ModelSource& inner) : inner_(inner) {}

  const ModelSourceDescriptor& descriptor() const override { return inner_.descriptor(); }
  const Vocabulary& vocabulary() const override { return inner_.vocabulary(); }
  bool concurrent_safe() const override { return inner_.concurrent_safe(); }

  ModelSource& inner() noexcept { return inner_; }

 protected:
  ModelSource& inner_;
};

/// Counts queries that reach the wrapped source.
class CountingSource final : public SourceDecorator {
 public:
  using SourceDecorator::SourceDecorator;

  std::size_t count() const noexcept { return count_.load(); }
  void reset() noexcept { count_.store(0); }

 protected:
  SourceOutput query(const SourceQuery& q) override;

 private:
  std::atomic<std::size_t> count_{0};
};

/// Response cache keyed by (context, image). Serializes access to a serial
/// inner source; a cached entry without an embedding is refreshed when one
/// is requested.
class CachedSource final : public SourceDecorator {
 public:
  using SourceDecorator::SourceDecorator;

  std::size_t size() const;

 protected:
  SourceOutput query(const SourceQuery& q) override;

 private:
  mutable std::mutex mutex_;
  std::mutex inner_mutex_;
  std::map<QueryKey, SourceOutput> cache_;
};

}  // namespace pmidecode
