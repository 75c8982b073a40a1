// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/trace.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

namespace pmidecode {

namespace {

constexpr std::string_view kTraceFormat = "pmidecode-trace";
constexpr int kTraceVersion = 1;

std::string describe(const QueryKey& key) {
  return fmt::format("(ctx=[{}], image={})", fmt::join(key.context, ","), key.image_id ? *key.image_id : "null");
}

Json record_to_json(const TraceRecord& r) {
  return Json{{"context", r.context},
              {"image", r.image_id ? Json(*r.image_id) : Json(nullptr)},
              {"distribution", r.distribution.vector()},
              {"embedding", r.embedding ? Json(*r.embedding) : Json(nullptr)}};
}

}  // namespace

TraceSource::TraceSource(std::shared_ptr<const Vocabulary> vocab, ModelSourceDescriptor descriptor,
                         std::vector<TraceRecord> records)
    : vocab_(std::move(vocab)), descriptor_(std::move(descriptor)) {
  descriptor_.kind = SourceKind::trace;
  for (auto& r : records) {
    QueryKey key{r.context, r.image_id};
    if (r.distribution.size() != vocab_->size()) {
      throw ValueError(fmt::format("trace record {} has {} probabilities for vocabulary size {}", describe(key),
                                   r.distribution.size(), vocab_->size()));
    }
    auto [it, inserted] = records_.try_emplace(key, std::move(r));
    if (!inserted) throw ValueError(fmt::format("duplicate trace record {}", describe(key)));
  }
}

TraceSource TraceSource::load(const std::filesystem::path& path) {
  const std::string source = path.string();
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  std::shared_ptr<const Vocabulary> vocab;
  ModelSourceDescriptor desc;
  std::vector<TraceRecord> records;
  std::map<QueryKey, std::size_t> seen;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const Json doc = parse_json(line, source, line_no - 1);
    const JsonReader r(doc, source, "", line_no);
    if (!vocab) {
      r.check_keys({"format", "version", "vocab_hash", "vocab", "origin", "supports_images", "supports_embeddings"});
      if (r.get_string("format") != kTraceFormat) r.fail("not a trace file", "format");
      if (r.get_int("version") != kTraceVersion) r.fail("unsupported trace version", "version");
      vocab = std::make_shared<const Vocabulary>(vocabulary_from_json(r.child("vocab")));
      if (vocab->hash() != r.get_string("vocab_hash")) r.fail("vocabulary hash does not match vocabulary", "vocab_hash");
      desc.uri = source;
      desc.supports_images = r.get_bool("supports_images");
      desc.supports_embeddings = r.get_bool("supports_embeddings");
      continue;
    }
    r.check_keys({"context", "image", "distribution", "embedding"});
    const auto dist_field = r.child("distribution");
    auto probs = dist_field.as_doubles();
    if (auto v = validate_distribution(probs, vocab->size())) dist_field.fail(v->describe());
    TraceRecord rec{r.get_token_ids("context"), std::nullopt, TokenDistribution(std::move(probs)), std::nullopt};
    if (!r.is_null("image")) rec.image_id = r.get_string("image");
    if (!r.is_null("embedding")) rec.embedding = r.get_doubles("embedding");
    QueryKey key{rec.context, rec.image_id};
    if (auto [it, inserted] = seen.try_emplace(key, line_no); !inserted) {
      r.fail(fmt::format("record {} duplicates line {}", describe(key), it->second));
    }
    records.push_back(std::move(rec));
  }
  if (!vocab) throw ParseError("missing trace header", source, 1);
  return TraceSource(std::move(vocab), desc, std::move(records));
}

SourceOutput TraceSource::query(const SourceQuery& q) {
  const QueryKey key = QueryKey::of(q);
  auto it = records_.find(key);
  if (it == records_.end()) {
    throw TraceMissError(fmt::format("trace '{}' has no record for {}", descriptor_.uri, describe(key)));
  }
  if (q.want_embedding && !it->second.embedding) {
    throw TraceMissError(fmt::format("trace '{}' recorded {} without an embedding", descriptor_.uri, describe(key)));
  }
  return SourceOutput{it->second.distribution, q.want_embedding ? it->second.embedding : std::nullopt};
}

std::vector<TraceRecord> RecordingSource::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

SourceOutput RecordingSource::query(const SourceQuery& q) {
  SourceOutput out = inner_.next(q);
  const QueryKey key = QueryKey::of(q);
  std::lock_guard lock(mutex_);
  auto it = index_.find(key);
  if (it == index_.end()) {
    index_.emplace(key, records_.size());
    records_.push_back(TraceRecord{key.context, key.image_id, out.distribution, out.embedding});
  } else if (out.embedding && !records_[it->second].embedding) {
    records_[it->second].embedding = out.embedding;
  }
  return out;
}

std::size_t RecordingSource::save(const std::filesystem::path& path) const {
  const auto recs = records();
  write_trace(path, *this, recs);
  return recs.size();
}

void write_trace(const std::filesystem::path& path, const ModelSource& source, std::span<const TraceRecord> records) {
  const auto& vocab = source.vocabulary();
  const auto& desc = source.descriptor();
  std::string out;
  const Json header{{"format", kTraceFormat},
                    {"version", kTraceVersion},
                    {"vocab_hash", vocab.hash()},
                    {"vocab", to_json(vocab)},
                    {"origin", desc.uri},
                    {"supports_images", desc.supports_images},
                    {"supports_embeddings", desc.supports_embeddings}};
  out += dump_compact(header) + "\n";
  for (const auto& r : records) out += dump_compact(record_to_json(r)) + "\n";
  write_text_file(path, out);
}

std::size_t record_trace(ModelSource& source, std::span<const SourceQuery> calls, const std::filesystem::path& path) {
  std::vector<TraceRecord> records;
  std::map<QueryKey, std::size_t> index;
  for (const auto& call : calls) {
    const QueryKey key = QueryKey::of(call);
    auto it = index.find(key);
    if (it != index.end() && (!call.want_embedding || records[it->second].embedding)) {
      spdlog::warn("record_trace: duplicate call {} collapsed", describe(key));
      continue;
    }
    SourceOutput out = source.next(call);
    if (it != index.end()) {
      records[it->second].embedding = out.embedding;
      continue;
    }
    index.emplace(key, records.size());
    records.push_back(TraceRecord{key.context, key.image_id, std::move(out.distribution), std::move(out.embedding)});
  }
  write_trace(path, source, records);
  return records.size();
}

}  // namespace pmidecode
