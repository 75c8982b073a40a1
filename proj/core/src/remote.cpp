// SPDX-License-Identifier: Apache-2.0
#include "pmidecode/remote.hpp"

#include <cmath>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

namespace pmidecode {

namespace {

Json parse_body(const std::string& body, const char* what) {
  try {
    return Json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(fmt::format("{} is not valid JSON: {}", what, e.what()), body);
  }
}

// JSON has no infinities; a null logprob stands for -inf (zero probability).
std::vector<double> numbers(const Json& v, const char* field, const std::string& body, bool null_is_neg_inf = false) {
  if (!v.is_array()) throw ProtocolError(fmt::format("field '{}' must be an array", field), body);
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (null_is_neg_inf && x.is_null()) {
      out.push_back(-std::numeric_limits<double>::infinity());
      continue;
    }
    if (!x.is_number()) throw ProtocolError(fmt::format("field '{}' holds a non-number", field), body);
    out.push_back(x.get<double>());
  }
  return out;
}

const Json& field(const Json& doc, const char* name, const std::string& body) {
  if (!doc.is_object() || !doc.contains(name)) {
    throw ProtocolError(fmt::format("missing field '{}'", name), body);
  }
  return doc.at(name);
}

}  // namespace

std::string remote_query_encode(const ContextTokens& ctx, const std::optional<std::string>& image_id,
                                bool want_embedding) {
  return dump_compact(Json{{"context", ctx},
                           {"image", image_id ? Json(*image_id) : Json(nullptr)},
                           {"want_embedding", want_embedding}});
}

RemoteQuery remote_query_decode(const std::string& body) {
  const Json doc = parse_body(body, "next_token request");
  RemoteQuery q;
  const Json& ctx = field(doc, "context", body);
  if (!ctx.is_array()) throw ProtocolError("field 'context' must be an array", body);
  for (const auto& id : ctx) {
    if (!id.is_number_integer()) throw ProtocolError("field 'context' holds a non-integer", body);
    q.context.push_back(id.get<TokenId>());
  }
  const Json& image = field(doc, "image", body);
  if (image.is_string()) {
    q.image_id = image.get<std::string>();
  } else if (!image.is_null()) {
    throw ProtocolError("field 'image' must be a string or null", body);
  }
  const Json& want = field(doc, "want_embedding", body);
  if (!want.is_boolean()) throw ProtocolError("field 'want_embedding' must be a boolean", body);
  q.want_embedding = want.get<bool>();
  return q;
}

std::string remote_response_encode(const RemoteResponse& response) {
  return dump_compact(Json{{"logprobs", response.logprobs},
                           {"embedding", response.embedding ? Json(*response.embedding) : Json(nullptr)}});
}

SourceOutput remote_response_decode(const std::string& body, std::size_t vocab_size) {
  const Json doc = parse_body(body, "next_token response");
  std::vector<double> logprobs = numbers(field(doc, "logprobs", body), "logprobs", body, true);
  if (logprobs.size() != vocab_size) {
    throw SessionError(fmt::format("response carries {} logprobs but the session vocabulary has {} tokens",
                                   logprobs.size(), vocab_size));
  }
  std::optional<std::vector<double>> embedding;
  if (doc.contains("embedding") && !doc.at("embedding").is_null()) {
    embedding = numbers(doc.at("embedding"), "embedding", body);
  }
  // -inf logprobs are legal (zero probability); the softmax needs finite input.
  double hi = -std::numeric_limits<double>::infinity();
  for (double lp : logprobs) {
    if (std::isnan(lp) || lp == std::numeric_limits<double>::infinity()) {
      throw ProtocolError("logprobs contain NaN or +inf", body);
    }
    hi = std::max(hi, lp);
  }
  if (!std::isfinite(hi)) throw ProtocolError("all logprobs are -inf", body);
  std::vector<double> probs(logprobs.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    probs[i] = std::isfinite(logprobs[i]) ? std::exp(logprobs[i] - hi) : 0.0;
    z += probs[i];
  }
  for (double& p : probs) p /= z;
  return SourceOutput{TokenDistribution(std::move(probs)), std::move(embedding)};
}

std::string session_info_encode(const SessionInfo& info) {
  Json doc = info.metadata.is_object() ? info.metadata : Json::object();
  doc["vocab_hash"] = info.vocab_hash;
  doc["vocab_size"] = info.vocab_size;
  doc["eos_id"] = info.eos_id;
  doc["supports_images"] = info.supports_images;
  doc["supports_embeddings"] = info.supports_embeddings;
  return dump_compact(doc);
}

SessionInfo session_info_decode(const std::string& body) {
  Json doc = parse_body(body, "info response");
  SessionInfo info;
  try {
    info.vocab_hash = field(doc, "vocab_hash", body).get<std::string>();
    info.vocab_size = field(doc, "vocab_size", body).get<std::size_t>();
    info.eos_id = field(doc, "eos_id", body).get<TokenId>();
    info.supports_images = field(doc, "supports_images", body).get<bool>();
    info.supports_embeddings = field(doc, "supports_embeddings", body).get<bool>();
  } catch (const nlohmann::json::type_error& e) {
    throw ProtocolError(fmt::format("info response has a mistyped field: {}", e.what()), body);
  }
  for (const char* k : {"vocab_hash", "vocab_size", "eos_id", "supports_images", "supports_embeddings"}) doc.erase(k);
  info.metadata = std::move(doc);
  return info;
}

Endpoint Endpoint::parse(const std::string& uri) {
  static const std::regex re(R"(^(http)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:]+\])(?::([0-9]{1,5}))?/?$)");
  std::smatch m;
  if (!std::regex_match(uri, m, re)) {
    throw ConfigError(fmt::format("'{}' is not a well-formed endpoint (expected http://host[:port])", uri));
  }
  Endpoint ep{m[1].str(), m[2].str(), 80};
  if (m[3].matched) {
    ep.port = std::stoi(m[3].str());
    if (ep.port <= 0 || ep.port > 65535) throw ConfigError(fmt::format("port out of range in '{}'", uri));
  }
  return ep;
}

std::string Endpoint::base() const { return fmt::format("{}://{}:{}", scheme, host, port); }

struct RemoteSource::Client {
  explicit Client(const Endpoint& ep) : http(ep.host, ep.port) {}
  httplib::Client http;
};

RemoteSource::RemoteSource(const std::string& uri, std::shared_ptr<const Vocabulary> vocab, RemoteOptions options)
    : vocab_(std::move(vocab)), options_(options), endpoint_(Endpoint::parse(uri)) {
  if (!vocab_) throw ConfigError(fmt::format("remote source '{}' needs a vocabulary", uri));
  if (options_.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
  client_ = std::make_unique<Client>(endpoint_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
  client_->http.set_connection_timeout(secs.count(), usecs.count());
  client_->http.set_read_timeout(secs.count(), usecs.count());
  client_->http.set_write_timeout(secs.count(), usecs.count());

  descriptor_.kind = SourceKind::remote;
  descriptor_.uri = uri;

  session_ = session_info_decode(request("GET", "/v1/info", ""));
  if (session_.vocab_size != vocab_->size()) {
    throw SessionError(fmt::format("bridge '{}' serves a vocabulary of {} tokens, expected {}", uri,
                                   session_.vocab_size, vocab_->size()));
  }
  if (session_.eos_id != vocab_->eos_id()) {
    throw SessionError(fmt::format("bridge '{}' reports eos_id {}, expected {}", uri, session_.eos_id, vocab_->eos_id()));
  }
  if (session_.vocab_hash != vocab_->hash()) {
    throw SessionError(fmt::format("bridge '{}' vocabulary hash {} does not match {}", uri, session_.vocab_hash,
                                   vocab_->hash()));
  }
  descriptor_.supports_images = session_.supports_images;
  descriptor_.supports_embeddings = session_.supports_embeddings;
  registered_ = {"black", "white"};
}

RemoteSource::~RemoteSource() = default;

std::string RemoteSource::request(const std::string& method, const std::string& path, const std::string& body) {
  const std::string where = endpoint_.base() + path;
  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    httplib::Result res = method == "GET" ? client_->http.Get(path) : client_->http.Post(path, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_error = fmt::format("HTTP {}", res->status);
    } else if (res->status >= 400) {
      throw ProtocolError(fmt::format("{} {} returned HTTP {}", method, where, res->status), res->body);
    } else {
      return res->body;
    }
    spdlog::debug("{} {} failed (attempt {}/{}): {}", method, where, attempt, options_.max_attempts, last_error);
    if (attempt < options_.max_attempts) std::this_thread::sleep_for(options_.backoff * attempt);
  }
  throw TransportError(fmt::format("{} {} failed after {} attempt(s): {}", method, where, options_.max_attempts, last_error),
                       descriptor_.uri, options_.max_attempts, true);
}

void RemoteSource::register_image(const std::string& id, const std::string& png_bytes) {
  if (id.empty()) throw ValueError("image id must be non-empty");
  const std::string body = dump_compact(Json{{"id", id}, {"png_base64", httplib::detail::base64_encode(png_bytes)}});
  std::lock_guard lock(mutex_);
  request("POST", "/v1/images", body);
  registered_.insert(id);
}

void RemoteSource::ensure_registered(const ImageContext& image) {
  // Non-file ids are assumed to be known to the bridge already.
  if (registered_.contains(image.id) || image.kind != ImageKind::file) return;
  const std::string bytes = read_text_file(image.path);
  const std::string body = dump_compact(Json{{"id", image.id}, {"png_base64", httplib::detail::base64_encode(bytes)}});
  request("POST", "/v1/images", body);
  registered_.insert(image.id);
}

SourceOutput RemoteSource::query(const SourceQuery& q) {
  std::lock_guard lock(mutex_);
  std::optional<std::string> image_id;
  if (q.image) {
    ensure_registered(*q.image);
    image_id = q.image->id;
  }
  const std::string body = request("POST", "/v1/next_token", remote_query_encode(q.context, image_id, q.want_embedding));
  return remote_response_decode(body, vocab_->size());
}

}  // namespace pmidecode
