// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pmidecode/pmidecode.hpp"

namespace pmidecode::cli {

struct SourceSpec {
  SourceKind kind = SourceKind::table;
  std::string uri;  // file path (relative to the config) or http endpoint
  RemoteOptions remote;

  bool operator==(const SourceSpec&) const = default;
};

/// Everything one run needs. Relative paths resolve against `base_dir`,
/// the directory of the config file; they are kept verbatim so the config
/// round-trips unchanged.
struct RunConfig {
  DecodeConfig decode;
  MarginalSpec marginal;
  std::optional<SourceSpec> text_source;
  std::optional<SourceSpec> vlm_source;
  std::string vocab;  // optional vocabulary file; required when both sources are remote
  std::string template_file;
  std::string prompt_template = "{prompt}";
  std::optional<std::string> vlm_prompt_template;
  std::string inputs;
  std::string output;
  std::uint64_t seed = 0;

  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& path) const;

  bool operator==(const RunConfig& other) const;
};

Json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const Json& doc, const std::string& source, const std::filesystem::path& base_dir,
                               std::optional<std::uint64_t> seed_override = std::nullopt);
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);

/// SHA-256 over the decoding parameters (decode, marginal, templates, seed).
/// Source locations are excluded so a trace replay hashes like its recording.
std::string config_hash(const RunConfig& cfg);

/// Replaces every {name} with the string value of record[name].
std::string render_template(const std::string& tmpl, const Json& record);

struct InputRecord {
  Json fields;
  Prompt prompt;
  std::optional<std::vector<std::string>> answers;
};

std::vector<Json> read_jsonl(const std::filesystem::path& path);

/// Builds the prompt pair and image for one input line.
InputRecord make_input(const RunConfig& cfg, const Vocabulary& vocab, const Json& record, std::size_t index);

struct OpenSources {
  std::shared_ptr<const Vocabulary> vocab;
  std::unique_ptr<ModelSource> text;
  std::unique_ptr<ModelSource> vlm;

  ModelPair pair() const { return ModelPair{text.get(), vlm.get()}; }
};

OpenSources open_sources(const RunConfig& cfg);

}  // namespace pmidecode::cli
