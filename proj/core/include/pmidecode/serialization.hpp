// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmidecode/core.hpp"

namespace pmidecode {

using Json = nlohmann::json;

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);

/// Parses JSON text; syntax errors become ParseError with a 1-based line.
Json parse_json(std::string_view text, const std::string& source, std::size_t line_offset = 0);

/// Typed field access reporting the JSON pointer of the offending field.
class JsonReader {
 public:
  JsonReader(const Json& value, std::string source, std::string pointer = "", std::size_t line = 0)
      : value_(value), source_(std::move(source)), pointer_(std::move(pointer)), line_(line) {}

  const Json& value() const noexcept { return value_; }
  const std::string& pointer() const noexcept { return pointer_; }

  bool has(const std::string& key) const { return value_.is_object() && value_.contains(key); }
  bool is_null(const std::string& key) const { return !has(key) || value_.at(key).is_null(); }

  JsonReader child(const std::string& key) const;
  JsonReader at(std::size_t index) const;
  std::size_t array_size() const;

  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<TokenId> get_token_ids(const std::string& key) const;

  double as_double() const;
  std::string as_string() const;
  std::vector<double> as_doubles() const;

  void require_object() const;
  /// Rejects keys outside `allowed`.
  void check_keys(std::initializer_list<std::string_view> allowed) const;

  [[noreturn]] void fail(const std::string& message, const std::string& key = "") const;

 private:
  const Json& value_;
  std::string source_;
  std::string pointer_;
  std::size_t line_;
};

Json to_json(const Vocabulary& vocab);
Vocabulary vocabulary_from_json(const JsonReader& in);
Vocabulary load_vocabulary(const std::filesystem::path& path);

Json to_json(const ImageContext& image);
ImageContext image_from_json(const JsonReader& in);

Json to_json(const DecodeConfig& cfg);
/// Missing keys keep their defaults; a "preset" key selects the base values.
DecodeConfig decode_config_from_json(const JsonReader& in);

/// Compact dump with sorted keys; the byte format of every file the engine writes.
std::string dump_compact(const Json& value);

}  // namespace pmidecode
