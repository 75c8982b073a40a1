// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pmidecode/serialization.hpp"
#include "pmidecode/sources.hpp"

namespace pmidecode {

// Wire protocol spoken with a model bridge over HTTP/1.1:
//   GET  /v1/info        -> SessionInfo
//   POST /v1/images      <- {"id": str, "png_base64": str}
//   POST /v1/next_token  <- {"context": [int...], "image": id|null, "want_embedding": bool}
//                        -> {"logprobs": [float|null...], "embedding": [float...]|null}
//   A null logprob is -inf: the token has zero probability.
// The builtin ids "black" and "white" are always registered on the bridge.

struct RemoteQuery {
  ContextTokens context;
  std::optional<std::string> image_id;
  bool want_embedding = false;

  bool operator==(const RemoteQuery&) const = default;
};

struct RemoteResponse {
  std::vector<double> logprobs;
  std::optional<std::vector<double>> embedding;
};

struct SessionInfo {
  std::string vocab_hash;
  std::size_t vocab_size = 0;
  TokenId eos_id = 0;
  bool supports_images = false;
  bool supports_embeddings = false;
  Json metadata = Json::object();  // bridge extras such as proxy image size
};

std::string remote_query_encode(const ContextTokens& ctx, const std::optional<std::string>& image_id,
                                bool want_embedding);
/// Server-side inverse of remote_query_encode. Malformed bodies raise ProtocolError.
RemoteQuery remote_query_decode(const std::string& body);

std::string remote_response_encode(const RemoteResponse& response);
/// Decodes a next_token response and renormalizes the log-probabilities.
/// Malformed bodies raise ProtocolError; a length other than `vocab_size`
/// raises SessionError.
SourceOutput remote_response_decode(const std::string& body, std::size_t vocab_size);

std::string session_info_encode(const SessionInfo& info);
SessionInfo session_info_decode(const std::string& body);

struct Endpoint {
  std::string scheme;
  std::string host;
  int port = 80;

  /// Accepts http://host[:port][/]. Throws ConfigError otherwise.
  static Endpoint parse(const std::string& uri);
  std::string base() const;
};

struct RemoteOptions {
  std::chrono::milliseconds timeout{10000};
  int max_attempts = 3;
  std::chrono::milliseconds backoff{100};

  bool operator==(const RemoteOptions&) const = default;
};

/// Client for a model bridge. The session header is fetched and checked
/// against `vocab` on construction. Calls are serialized internally.
class RemoteSource final : public ModelSource {
 public:
  RemoteSource(const std::string& uri, std::shared_ptr<const Vocabulary> vocab, RemoteOptions options = {});
  ~RemoteSource() override;

  const ModelSourceDescriptor& descriptor() const override { return descriptor_; }
  const Vocabulary& vocabulary() const override { return *vocab_; }
  const SessionInfo& session() const noexcept { return session_; }

  /// Uploads PNG bytes under `id`.
  void register_image(const std::string& id, const std::string& png_bytes);

 protected:
  SourceOutput query(const SourceQuery& q) override;

 private:
  struct Client;

  std::string request(const std::string& method, const std::string& path, const std::string& body);
  void ensure_registered(const ImageContext& image);

  std::shared_ptr<const Vocabulary> vocab_;
  RemoteOptions options_;
  Endpoint endpoint_;
  ModelSourceDescriptor descriptor_;
  SessionInfo session_;
  std::unique_ptr<Client> client_;
  std::mutex mutex_;
  std::set<std::string> registered_;
};

}  // namespace pmidecode
