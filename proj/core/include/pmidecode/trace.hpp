// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "pmidecode/serialization.hpp"
#include "pmidecode/sources.hpp"

namespace pmidecode {

struct TraceRecord {
  ContextTokens context;
  std::optional<std::string> image_id;
  TokenDistribution distribution;
  std::optional<std::vector<double>> embedding;
};

/// Replays a recorded trace. Keys are exact full contexts; anything not
/// recorded raises TraceMissError.
///
/// File layout: newline-delimited JSON. Line 1 is the header
/// {"format":"pmidecode-trace","version":1,"vocab_hash":...,"vocab":{...},
///  "origin":...,"supports_images":...,"supports_embeddings":...};
/// each further line is {"context":[...],"image":id|null,
///  "distribution":[...],"embedding":[...]|null}.
class TraceSource final : public ModelSource {
 public:
  TraceSource(std::shared_ptr<const Vocabulary> vocab, ModelSourceDescriptor descriptor,
              std::vector<TraceRecord> records);

  static TraceSource load(const std::filesystem::path& path);

  const ModelSourceDescriptor& descriptor() const override { return descriptor_; }
  const Vocabulary& vocabulary() const override { return *vocab_; }
  std::shared_ptr<const Vocabulary> shared_vocabulary() const { return vocab_; }
  bool concurrent_safe() const override { return true; }
  std::size_t size() const noexcept { return records_.size(); }

 protected:
  SourceOutput query(const SourceQuery& q) override;

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  ModelSourceDescriptor descriptor_;
  std::map<QueryKey, TraceRecord> records_;
};

/// Pass-through decorator that remembers every distinct query it forwards.
class RecordingSource final : public SourceDecorator {
 public:
  using SourceDecorator::SourceDecorator;

  std::vector<TraceRecord> records() const;
  /// Writes the trace file; returns the number of records written.
  std::size_t save(const std::filesystem::path& path) const;

 protected:
  SourceOutput query(const SourceQuery& q) override;

 private:
  mutable std::mutex mutex_;
  std::vector<TraceRecord> records_;
  std::map<QueryKey, std::size_t> index_;
};

void write_trace(const std::filesystem::path& path, const ModelSource& source,
                 std::span<const TraceRecord> records);

/// Issues `calls` against `source` and writes them as a trace file.
/// Duplicate keys are collapsed with a warning. Returns records written.
std::size_t record_trace(ModelSource& source, std::span<const SourceQuery> calls,
                         const std::filesystem::path& path);

}  // namespace pmidecode
