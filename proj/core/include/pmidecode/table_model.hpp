// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pmidecode/serialization.hpp"
#include "pmidecode/sources.hpp"

namespace pmidecode {

/// Exact, enumerable n-gram stand-in for a real model.
///
/// An entry is keyed by a context suffix shorter than `order` and an optional
/// image id. Lookup walks suffix lengths from longest to shortest; at each
/// length an entry for the query's image beats an image-agnostic entry (image
/// null), which matches any query. Unmatched contexts get the default row.
/// When token embeddings are present, the embedding of a context is the row
/// of its last token (zeros for an empty context).
class TableModel final : public ModelSource {
 public:
  struct Entry {
    ContextTokens suffix;
    std::optional<std::string> image_id;
    TokenDistribution distribution;
  };

  TableModel(std::shared_ptr<const Vocabulary> vocab, std::size_t order, TokenDistribution fallback,
             std::vector<Entry> entries, std::optional<bool> supports_images = std::nullopt,
             std::vector<std::vector<double>> token_embeddings = {}, std::string uri = "");

  static TableModel from_json(const Json& doc, const std::string& source);

  const ModelSourceDescriptor& descriptor() const override { return descriptor_; }
  const Vocabulary& vocabulary() const override { return *vocab_; }
  std::shared_ptr<const Vocabulary> shared_vocabulary() const { return vocab_; }
  bool concurrent_safe() const override { return true; }

  std::size_t order() const noexcept { return order_; }
  const TokenDistribution& lookup(const ContextTokens& ctx, const std::optional<std::string>& image) const;

  Json to_json() const;

 protected:
  SourceOutput query(const SourceQuery& q) override;

 private:
  using Key = std::pair<ContextTokens, std::optional<std::string>>;

  std::shared_ptr<const Vocabulary> vocab_;
  std::size_t order_;
  TokenDistribution default_;
  std::map<Key, TokenDistribution> entries_;
  std::vector<std::vector<double>> embeddings_;
  ModelSourceDescriptor descriptor_;
};

/// Loads and validates a table-model file. Violations name the offending
/// context key; JSON errors carry line and field.
TableModel load_table_model(const std::filesystem::path& path);

}  // namespace pmidecode
