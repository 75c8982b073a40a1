// SPDX-License-Identifier: Apache-2.0
#include "run_config.hpp"

#include <sstream>

#include <fmt/format.h>

namespace pmidecode::cli {

std::filesystem::path RunConfig::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  if (p.is_relative()) p = base_dir / p;
  return p;
}

bool RunConfig::operator==(const RunConfig& o) const {
  return decode == o.decode && marginal == o.marginal && text_source == o.text_source &&
         vlm_source == o.vlm_source && vocab == o.vocab && template_file == o.template_file &&
         prompt_template == o.prompt_template && vlm_prompt_template == o.vlm_prompt_template &&
         inputs == o.inputs && output == o.output && seed == o.seed;
}

namespace {

Json source_to_json(const SourceSpec& s) {
  Json doc{{"kind", std::string(to_string(s.kind))}, {"uri", s.uri}};
  if (s.kind == SourceKind::remote) {
    doc["timeout_ms"] = s.remote.timeout.count();
    doc["max_attempts"] = s.remote.max_attempts;
    doc["backoff_ms"] = s.remote.backoff.count();
  }
  return doc;
}

SourceSpec source_from_json(const JsonReader& in) {
  in.check_keys({"kind", "uri", "timeout_ms", "max_attempts", "backoff_ms"});
  SourceSpec s;
  try {
    s.kind = parse_source_kind(in.get_string("kind"));
  } catch (const ConfigError& e) {
    in.fail(e.message(), "kind");
  }
  s.uri = in.get_string("uri");
  if (s.uri.empty()) in.fail("empty uri", "uri");
  if (in.has("timeout_ms")) s.remote.timeout = std::chrono::milliseconds(in.get_int("timeout_ms"));
  if (in.has("max_attempts")) s.remote.max_attempts = static_cast<int>(in.get_int("max_attempts"));
  if (in.has("backoff_ms")) s.remote.backoff = std::chrono::milliseconds(in.get_int("backoff_ms"));
  if (s.kind == SourceKind::remote) {
    try {
      Endpoint::parse(s.uri);
    } catch (const ConfigError& e) {
      in.fail(e.message(), "uri");
    }
    if (s.remote.max_attempts < 1) in.fail("max_attempts must be at least 1", "max_attempts");
  }
  return s;
}

}  // namespace

Json to_json(const RunConfig& cfg) {
  Json decode = to_json(cfg.decode);
  decode.erase("marginal_images");
  Json doc{{"decode", decode},
           {"marginal", to_json(cfg.marginal)},
           {"prompt_template", cfg.prompt_template},
           {"inputs", cfg.inputs},
           {"seed", cfg.seed}};
  if (cfg.text_source) doc["text_source"] = source_to_json(*cfg.text_source);
  if (cfg.vlm_source) doc["vlm_source"] = source_to_json(*cfg.vlm_source);
  if (!cfg.vocab.empty()) doc["vocab"] = cfg.vocab;
  if (!cfg.template_file.empty()) doc["template_file"] = cfg.template_file;
  if (cfg.vlm_prompt_template) doc["vlm_prompt_template"] = *cfg.vlm_prompt_template;
  if (!cfg.output.empty()) doc["output"] = cfg.output;
  return doc;
}

RunConfig run_config_from_json(const Json& doc, const std::string& source, const std::filesystem::path& base_dir,
                               std::optional<std::uint64_t> seed_override) {
  const JsonReader in(doc, source);
  in.check_keys({"decode", "marginal", "text_source", "vlm_source", "vocab", "template_file", "prompt_template",
                 "vlm_prompt_template", "inputs", "output", "seed"});
  RunConfig cfg;
  cfg.base_dir = base_dir;
  if (in.has("seed")) {
    const auto seed = in.get_int("seed");
    if (seed < 0) in.fail("seed must be non-negative", "seed");
    cfg.seed = static_cast<std::uint64_t>(seed);
  }
  if (seed_override) cfg.seed = *seed_override;
  if (in.has("decode")) cfg.decode = decode_config_from_json(in.child("decode"));
  if (in.has("marginal")) {
    try {
      cfg.marginal = marginal_spec_from_json(in.child("marginal"), base_dir, cfg.seed);
    } catch (const ConfigError& e) {
      in.fail(e.message(), "marginal");
    }
  } else {
    cfg.marginal = MarginalSpec::predefined(cfg.decode.marginal_images);
  }
  cfg.decode.marginal_images = cfg.marginal.images;
  if (in.has("text_source")) cfg.text_source = source_from_json(in.child("text_source"));
  if (in.has("vlm_source")) cfg.vlm_source = source_from_json(in.child("vlm_source"));
  if (in.has("vocab")) cfg.vocab = in.get_string("vocab");
  if (in.has("template_file")) {
    cfg.template_file = in.get_string("template_file");
    const auto path = cfg.resolve(cfg.template_file);
    const Json tmpl = parse_json(read_text_file(path), path.string());
    const JsonReader t(tmpl, path.string());
    t.check_keys({"task", "variables", "text_model", "vlm"});
    cfg.prompt_template = t.get_string("text_model");
    if (t.has("vlm")) cfg.vlm_prompt_template = t.get_string("vlm");
  }
  if (in.has("prompt_template")) cfg.prompt_template = in.get_string("prompt_template");
  if (in.has("vlm_prompt_template")) cfg.vlm_prompt_template = in.get_string("vlm_prompt_template");
  if (in.has("inputs")) cfg.inputs = in.get_string("inputs");
  if (in.has("output")) cfg.output = in.get_string("output");

  try {
    cfg.decode.validate();
  } catch (const ConfigError& e) {
    in.fail(e.message(), "decode");
  }
  const auto scorer = cfg.decode.scorer;
  if (scorer != ScorerKind::vlm_only && !cfg.text_source) in.fail("missing field", "text_source");
  if (scorer != ScorerKind::text_only && !cfg.vlm_source) in.fail("missing field", "vlm_source");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  const std::string source = path.string();
  const Json doc = parse_json(read_text_file(path), source);
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return run_config_from_json(doc, source, base, seed_override);
}

std::string config_hash(const RunConfig& cfg) {
  Json decode = to_json(cfg.decode);
  decode.erase("marginal_images");
  Json images = Json::array();
  for (const auto& img : cfg.marginal.images) images.push_back(img.id);
  const Json doc{{"decode", decode},
                 {"marginal_images", images},
                 {"marginal_scheme", std::string(to_string(cfg.marginal.scheme))},
                 {"prompt_template", cfg.prompt_template},
                 {"vlm_prompt_template", cfg.vlm_prompt_template ? Json(*cfg.vlm_prompt_template) : Json(nullptr)},
                 {"seed", cfg.seed}};
  return sha256_hex(dump_compact(doc)).substr(0, 16);
}

std::string render_template(const std::string& tmpl, const Json& record) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string::npos) throw ConfigError(fmt::format("unterminated placeholder in template '{}'", tmpl));
    out.append(tmpl, pos, open - pos);
    const std::string name = tmpl.substr(open + 1, close - open - 1);
    if (!record.is_object() || !record.contains(name)) {
      throw ConfigError(fmt::format("template placeholder {{{}}} has no value in the input record", name));
    }
    const Json& v = record.at(name);
    out += v.is_string() ? v.get<std::string>() : v.dump();
    pos = close + 1;
  }
  return out;
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  const std::string source = path.string();
  std::istringstream in(read_text_file(path));
  std::vector<Json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    rows.push_back(parse_json(line, source, line_no - 1));
  }
  return rows;
}

namespace {

ContextTokens ids_field(const Json& record, const char* key, const Vocabulary& vocab) {
  const Json& v = record.at(key);
  if (!v.is_array()) throw ConfigError(fmt::format("'{}' must be an array of token ids", key));
  ContextTokens ids;
  for (const auto& x : v) {
    if (!x.is_number_integer()) throw ConfigError(fmt::format("'{}' holds a non-integer", key));
    ids.push_back(x.get<TokenId>());
  }
  try {
    vocab.check_context(ids);
  } catch (const ValueError& e) {
    throw ConfigError(fmt::format("'{}': {}", key, e.message()));
  }
  return ids;
}

}  // namespace

InputRecord make_input(const RunConfig& cfg, const Vocabulary& vocab, const Json& record, std::size_t index) {
  try {
    if (!record.is_object()) throw ConfigError("input record is not an object");
    InputRecord in;
    in.fields = record;
    if (record.contains("prompt_ids")) {
      in.prompt.text = ids_field(record, "prompt_ids", vocab);
    } else {
      in.prompt.text = vocab.tokenize_words(render_template(cfg.prompt_template, record));
    }
    if (record.contains("vlm_prompt_ids")) {
      in.prompt.vlm = ids_field(record, "vlm_prompt_ids", vocab);
    } else if (cfg.vlm_prompt_template && !record.contains("prompt_ids")) {
      in.prompt.vlm = vocab.tokenize_words(render_template(*cfg.vlm_prompt_template, record));
    }
    if (record.contains("image") && !record.at("image").is_null()) {
      if (!record.at("image").is_string()) throw ConfigError("'image' must be a string id");
      const std::string id = record.at("image").get<std::string>();
      try {
        if (record.contains("image_path")) {
          in.prompt.image = ImageContext::file(id, cfg.resolve(record.at("image_path").get<std::string>()).string());
        } else {
          in.prompt.image = ImageContext::from_id(id);
        }
      } catch (const ValueError& e) {
        throw ConfigError(e.message());
      }
    }
    if (record.contains("answer")) {
      in.answers = std::vector<std::string>{record.at("answer").get<std::string>()};
    } else if (record.contains("answers")) {
      in.answers = record.at("answers").get<std::vector<std::string>>();
    }
    return in;
  } catch (Error& e) {
    e.add_context(fmt::format("input {}", index));
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("input {}: {}", index, e.what()));
  }
}

namespace {

std::unique_ptr<ModelSource> open_file_source(const RunConfig& cfg, const SourceSpec& spec) {
  const auto path = cfg.resolve(spec.uri);
  if (spec.kind == SourceKind::table) return std::make_unique<TableModel>(load_table_model(path));
  return std::make_unique<TraceSource>(TraceSource::load(path));
}

}  // namespace

OpenSources open_sources(const RunConfig& cfg) {
  OpenSources out;
  if (!cfg.vocab.empty()) out.vocab = std::make_shared<const Vocabulary>(load_vocabulary(cfg.resolve(cfg.vocab)));

  std::vector<std::pair<const SourceSpec*, std::unique_ptr<ModelSource>*>> order;
  if (cfg.text_source) order.emplace_back(&*cfg.text_source, &out.text);
  if (cfg.vlm_source) order.emplace_back(&*cfg.vlm_source, &out.vlm);

  // File-backed sources first: they can supply the vocabulary a remote needs.
  for (auto& [spec, slot] : order) {
    if (spec->kind == SourceKind::remote) continue;
    *slot = open_file_source(cfg, *spec);
    if (!out.vocab) out.vocab = std::make_shared<const Vocabulary>((*slot)->vocabulary());
  }
  for (auto& [spec, slot] : order) {
    if (spec->kind != SourceKind::remote) continue;
    if (!out.vocab) throw ConfigError(fmt::format("remote source '{}' needs a \"vocab\" file in the config", spec->uri));
    *slot = std::make_unique<RemoteSource>(spec->uri, out.vocab, spec->remote);
  }
  for (auto& [spec, slot] : order) {
    if (!((*slot)->vocabulary() == *out.vocab)) {
      throw ConfigError(fmt::format("source '{}' uses a different vocabulary", spec->uri));
    }
  }
  return out;
}

}  // namespace pmidecode::cli
