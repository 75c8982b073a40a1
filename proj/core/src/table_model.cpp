// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/table_model.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace pmidecode {

namespace {

std::string describe_key(const ContextTokens& ctx, const std::optional<std::string>& image) {
  return fmt::format("(ctx=[{}], image={})", fmt::join(ctx, ","), image ? *image : "null");
}

}  // namespace

TableModel::TableModel(std::shared_ptr<const Vocabulary> vocab, std::size_t order,
                       TokenDistribution fallback, std::vector<Entry> entries,
                       std::optional<bool> supports_images,
                       std::vector<std::vector<double>> token_embeddings, std::string uri)
    : vocab_(std::move(vocab)), order_(order), default_(std::move(fallback)), embeddings_(std::move(token_embeddings)) {
  if (!vocab_) throw ValueError("table model needs a vocabulary");
  if (order_ == 0) throw ValueError("table model order must be positive");
  if (default_.size() != vocab_->size()) {
    throw ValueError(fmt::format("default row has {} entries for vocabulary size {}", default_.size(), vocab_->size()));
  }
  bool any_image = false;
  for (auto& e : entries) {
    const auto key_text = describe_key(e.suffix, e.image_id);
    if (e.suffix.size() >= order_) {
      throw ValueError(fmt::format("entry {} has context length {} but order is {}", key_text, e.suffix.size(), order_));
    }
    if (e.distribution.size() != vocab_->size()) {
      throw ValueError(fmt::format("entry {} has {} probabilities for vocabulary size {}", key_text,
                                   e.distribution.size(), vocab_->size()));
    }
    try {
      vocab_->check_context(e.suffix);
    } catch (const ValueError& err) {
      throw ValueError(fmt::format("entry {}: {}", key_text, err.message()));
    }
    if (e.image_id && e.image_id->empty()) throw ValueError(fmt::format("entry {} has an empty image id", key_text));
    any_image = any_image || e.image_id.has_value();
    auto [it, inserted] = entries_.try_emplace(Key{e.suffix, e.image_id}, std::move(e.distribution));
    if (!inserted) throw ValueError(fmt::format("duplicate entry {}", key_text));
  }
  if (!embeddings_.empty()) {
    if (embeddings_.size() != vocab_->size()) {
      throw ValueError(fmt::format("{} token embeddings for vocabulary size {}", embeddings_.size(), vocab_->size()));
    }
    for (std::size_t i = 0; i < embeddings_.size(); ++i) {
      if (embeddings_[i].size() != embeddings_[0].size() || embeddings_[i].empty()) {
        throw ValueError(fmt::format("token embedding {} has inconsistent dimension", i));
      }
    }
  }
  descriptor_.kind = SourceKind::table;
  descriptor_.uri = std::move(uri);
  descriptor_.supports_images = supports_images.value_or(any_image);
  descriptor_.supports_embeddings = !embeddings_.empty();
  if (any_image && !descriptor_.supports_images) {
    throw ValueError("entries are keyed by image but supports_images is false");
  }
}

const TokenDistribution& TableModel::lookup(const ContextTokens& ctx, const std::optional<std::string>& image) const {
  const std::size_t longest = std::min(order_ - 1, ctx.size());
  for (std::size_t len = longest + 1; len-- > 0;) {
    ContextTokens suffix(ctx.end() - static_cast<std::ptrdiff_t>(len), ctx.end());
    if (image) {
      auto it = entries_.find(Key{suffix, image});
      if (it != entries_.end()) return it->second;
    }
    auto it = entries_.find(Key{std::move(suffix), std::nullopt});
    if (it != entries_.end()) return it->second;
  }
  return default_;
}

SourceOutput TableModel::query(const SourceQuery& q) {
  std::optional<std::string> image;
  if (q.image) image = q.image->id;
  SourceOutput out{lookup(q.context, image), std::nullopt};
  if (q.want_embedding) {
    if (q.context.empty()) {
      out.embedding = std::vector<double>(embeddings_.front().size(), 0.0);
    } else {
      out.embedding = embeddings_[static_cast<std::size_t>(q.context.back())];
    }
  }
  return out;
}

Json TableModel::to_json() const {
  Json entries = Json::array();
  for (const auto& [key, dist] : entries_) {
    entries.push_back(Json{{"ctx", key.first},
                           {"image", key.second ? Json(*key.second) : Json(nullptr)},
                           {"probs", dist.vector()}});
  }
  Json doc{{"vocab", pmidecode::to_json(*vocab_)},
           {"order", order_},
           {"default", default_.vector()},
           {"entries", entries},
           {"supports_images", descriptor_.supports_images}};
  if (!embeddings_.empty()) doc["token_embeddings"] = embeddings_;
  return doc;
}

TableModel TableModel::from_json(const Json& doc, const std::string& source) {
  const JsonReader in(doc, source);
  in.check_keys({"vocab", "order", "default", "entries", "supports_images", "token_embeddings"});
  auto vocab = std::make_shared<const Vocabulary>(vocabulary_from_json(in.child("vocab")));
  const auto order = in.get_int("order");
  if (order <= 0) in.fail("order must be a positive integer", "order");

  auto make_dist = [&](const JsonReader& field, const std::string& what) {
    auto probs = field.as_doubles();
    if (auto v = validate_distribution(probs, vocab->size())) field.fail(what + ": " + v->describe());
    return TokenDistribution(std::move(probs));
  };

  TokenDistribution fallback = make_dist(in.child("default"), "default row");
  std::vector<Entry> entries;
  if (in.has("entries")) {
    const auto list = in.child("entries");
    for (std::size_t i = 0; i < list.array_size(); ++i) {
      const auto e = list.at(i);
      e.check_keys({"ctx", "image", "probs"});
      Entry entry{e.get_token_ids("ctx"), std::nullopt, TokenDistribution::uniform(1)};
      if (!e.is_null("image")) entry.image_id = e.get_string("image");
      entry.distribution = make_dist(e.child("probs"), "entry " + describe_key(entry.suffix, entry.image_id));
      entries.push_back(std::move(entry));
    }
  }
  std::optional<bool> supports_images;
  if (in.has("supports_images")) supports_images = in.get_bool("supports_images");
  std::vector<std::vector<double>> embeddings;
  if (in.has("token_embeddings")) {
    const auto list = in.child("token_embeddings");
    for (std::size_t i = 0; i < list.array_size(); ++i) embeddings.push_back(list.at(i).as_doubles());
  }
  try {
    return TableModel(std::move(vocab), static_cast<std::size_t>(order), std::move(fallback), std::move(entries),
                      supports_images, std::move(embeddings), source);
  } catch (const ValueError& err) {
    in.fail(err.message());
  }
}

TableModel load_table_model(const std::filesystem::path& path) {
  const auto source = path.string();
  return TableModel::from_json(parse_json(read_text_file(path), source), source);
}

}  // namespace pmidecode
