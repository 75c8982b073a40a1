// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/serialization.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace pmidecode {

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

Json parse_json(std::string_view text, const std::string& source, std::size_t line_offset) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = static_cast<std::size_t>(
        std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
    throw ParseError(e.what(), source, line_offset + line + 1);
  }
}

// ---------------------------------------------------------------------------
// JsonReader

void JsonReader::fail(const std::string& message, const std::string& key) const {
  std::string where = pointer_;
  if (!key.empty()) where += "/" + key;
  if (where.empty()) where = "/";
  throw ParseError(message, source_, line_, where);
}

void JsonReader::require_object() const {
  if (!value_.is_object()) fail("expected an object");
}

void JsonReader::check_keys(std::initializer_list<std::string_view> allowed) const {
  require_object();
  for (const auto& [key, _] : value_.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail("unknown field", key);
    }
  }
}

JsonReader JsonReader::child(const std::string& key) const {
  require_object();
  if (!value_.contains(key)) fail("missing field", key);
  return JsonReader(value_.at(key), source_, pointer_ + "/" + key, line_);
}

JsonReader JsonReader::at(std::size_t index) const {
  if (!value_.is_array() || index >= value_.size()) fail(fmt::format("no element {}", index));
  return JsonReader(value_.at(index), source_, fmt::format("{}/{}", pointer_, index), line_);
}

std::size_t JsonReader::array_size() const {
  if (!value_.is_array()) fail("expected an array");
  return value_.size();
}

double JsonReader::as_double() const {
  if (!value_.is_number()) fail("expected a number");
  return value_.get<double>();
}

std::string JsonReader::as_string() const {
  if (!value_.is_string()) fail("expected a string");
  return value_.get<std::string>();
}

std::vector<double> JsonReader::as_doubles() const {
  if (!value_.is_array()) fail("expected an array of numbers");
  std::vector<double> out;
  out.reserve(value_.size());
  for (std::size_t i = 0; i < value_.size(); ++i) out.push_back(at(i).as_double());
  return out;
}

double JsonReader::get_double(const std::string& key) const { return child(key).as_double(); }

std::int64_t JsonReader::get_int(const std::string& key) const {
  const auto c = child(key);
  if (!c.value().is_number_integer()) c.fail("expected an integer");
  return c.value().get<std::int64_t>();
}

bool JsonReader::get_bool(const std::string& key) const {
  const auto c = child(key);
  if (!c.value().is_boolean()) c.fail("expected a boolean");
  return c.value().get<bool>();
}

std::string JsonReader::get_string(const std::string& key) const { return child(key).as_string(); }

std::vector<double> JsonReader::get_doubles(const std::string& key) const {
  return child(key).as_doubles();
}

std::vector<TokenId> JsonReader::get_token_ids(const std::string& key) const {
  const auto c = child(key);
  const std::size_t n = c.array_size();
  std::vector<TokenId> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = c.at(i);
    if (!e.value().is_number_integer()) e.fail("expected a token id");
    out.push_back(e.value().get<TokenId>());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Domain types

Json to_json(const Vocabulary& vocab) {
  return Json{{"tokens", vocab.tokens()}, {"eos_id", vocab.eos_id()}};
}

Vocabulary vocabulary_from_json(const JsonReader& in) {
  in.check_keys({"tokens", "eos_id"});
  const auto tokens = in.child("tokens");
  std::vector<std::string> list;
  for (std::size_t i = 0; i < tokens.array_size(); ++i) list.push_back(tokens.at(i).as_string());
  const auto eos = in.get_int("eos_id");
  try {
    return Vocabulary(std::move(list), static_cast<TokenId>(eos));
  } catch (const ValueError& e) {
    in.fail(e.message());
  }
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  const auto source = path.string();
  const Json doc = parse_json(read_text_file(path), source);
  return vocabulary_from_json(JsonReader(doc, source));
}

Json to_json(const ImageContext& image) {
  if (image.kind == ImageKind::file) return Json{{"id", image.id}, {"path", image.path}};
  return image.id;
}

ImageContext image_from_json(const JsonReader& in) {
  try {
    if (in.value().is_string()) return ImageContext::from_id(in.as_string());
    in.check_keys({"id", "path"});
    return ImageContext::file(in.get_string("id"), in.get_string("path"));
  } catch (const ValueError& e) {
    in.fail(e.message());
  }
}

Json to_json(const DecodeConfig& cfg) {
  Json images = Json::array();
  for (const auto& img : cfg.marginal_images) images.push_back(to_json(img));
  return Json{
      {"language_temperature", cfg.language_temperature},
      {"fluency_threshold", cfg.fluency_threshold},
      {"strategy", std::string(to_string(cfg.strategy))},
      {"beam_width", cfg.beam_width},
      {"length_penalty", cfg.length_penalty},
      {"max_tokens", cfg.max_tokens},
      {"contrastive_penalty", cfg.contrastive_penalty},
      {"contrastive_topk", cfg.contrastive_topk},
      {"marginal_images", images},
      {"scorer", std::string(to_string(cfg.scorer))},
      {"prob_floor", cfg.prob_floor},
  };
}

namespace {

std::size_t get_count(const JsonReader& in, const std::string& key) {
  const auto v = in.get_int(key);
  if (v < 0) in.fail("expected a non-negative integer", key);
  return static_cast<std::size_t>(v);
}

}  // namespace

DecodeConfig decode_config_from_json(const JsonReader& in) {
  in.check_keys({"preset", "language_temperature", "fluency_threshold", "strategy", "beam_width",
                 "length_penalty", "max_tokens", "contrastive_penalty", "contrastive_topk",
                 "marginal_images", "scorer", "prob_floor"});
  DecodeConfig cfg;
  try {
    if (in.has("preset")) cfg = preset(in.get_string("preset"));
    if (in.has("language_temperature")) cfg.language_temperature = in.get_double("language_temperature");
    if (in.has("fluency_threshold")) cfg.fluency_threshold = in.get_double("fluency_threshold");
    if (in.has("strategy")) cfg.strategy = parse_strategy(in.get_string("strategy"));
    if (in.has("beam_width")) cfg.beam_width = get_count(in, "beam_width");
    if (in.has("length_penalty")) cfg.length_penalty = in.get_double("length_penalty");
    if (in.has("max_tokens")) cfg.max_tokens = get_count(in, "max_tokens");
    if (in.has("contrastive_penalty")) cfg.contrastive_penalty = in.get_double("contrastive_penalty");
    if (in.has("contrastive_topk")) cfg.contrastive_topk = get_count(in, "contrastive_topk");
    if (in.has("scorer")) cfg.scorer = parse_scorer(in.get_string("scorer"));
    if (in.has("prob_floor")) cfg.prob_floor = in.get_double("prob_floor");
  } catch (const ConfigError& e) {
    in.fail(e.message());
  }
  if (in.has("marginal_images")) {
    const auto list = in.child("marginal_images");
    cfg.marginal_images.clear();
    for (std::size_t i = 0; i < list.array_size(); ++i) cfg.marginal_images.push_back(image_from_json(list.at(i)));
  }
  return cfg;
}

std::string dump_compact(const Json& value) { return value.dump(); }

}  // namespace pmidecode
