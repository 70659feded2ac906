#pragma once

// Engine-defined HTTP/JSON wire protocol for the model roles, plus the
// transports behind it: live HTTP, fixture playback, and a recorder that
// turns live traffic into fixtures.
//
//   POST /v1/detect    {image_id, image_b64 | image_uri, grounding_text?}
//                      -> {entities: [{label, bbox, confidence}]}
//   POST /v1/complete  {prompt} -> {text}
//   POST /v1/vqa       {image_id, image_b64 | image_uri, question}
//                      -> {text, yes_probability?}
//   POST /v1/embed     {kind: "image", payload_b64} | {kind: "text", text}
//                      -> {vector: [...]}
//
// Fixture files are a JSON array of
//   {role, request_sha256 | sequence_index | default: true, response}
// where request_sha256 is taken over the canonical (key-sorted, compact)
// request JSON.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "elegant/backends.hpp"
#include "json.hpp"

namespace elegant::backends {

using nlohmann::json;

std::string endpoint_path(Role role);

/// Key-sorted compact serialization. nlohmann objects are ordered maps, so
/// dump() is already canonical.
std::string canonical_json(const json& value);
std::string request_sha256(const json& request);

namespace wire {

json detect_request(const ImageRef& image,
                    const std::optional<std::string>& grounding);
json complete_request(const std::string& prompt);
json vqa_request(const ImageRef& image, const std::string& question);
json embed_text_request(const std::string& text);
json embed_image_request(const Image& image);

// Schema validation. Every violation throws ProtocolError.
std::vector<Entity> parse_detect_response(const json& body,
                                          const ImageRef& image);
std::string parse_complete_response(const json& body);
VerifierAnswer parse_vqa_response(const json& body);
EmbeddingVector parse_embed_response(const json& body);

}  // namespace wire

struct Reply {
  json body;
  int attempts = 1;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// Requests are idempotent by contract, so implementations may retry.
  virtual Reply post(Role role, const json& request) = 0;
};

enum class BackendMode { live, mock };

struct BackendConfig {
  std::string url;
  std::optional<std::string> token;
  double timeout_s = 30.0;
  int max_retries = 2;
  double backoff_initial_s = 0.25;
  BackendMode mode = BackendMode::live;

  void validate() const;
};

/// Live transport. Retries transport-level failures (connection errors,
/// timeouts, 408/429/5xx) with exponential backoff; never retries a
/// response that arrived but fails the schema.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(BackendConfig config);
  Reply post(Role role, const json& request) override;

  const BackendConfig& config() const { return config_; }

 private:
  BackendConfig config_;
  std::string scheme_host_port_;
  std::string base_path_;
};

struct FixtureEntry {
  Role role = Role::thinker;
  std::optional<std::string> request_sha256;
  std::optional<std::size_t> sequence_index;
  bool is_default = false;
  json response;
};

std::vector<FixtureEntry> parse_fixtures(const json& doc);
std::vector<FixtureEntry> load_fixtures(const std::filesystem::path& path);
json fixtures_to_json(const std::vector<FixtureEntry>& entries);

/// Fixture playback. Lookup order: exact request hash, then the role's
/// sequence script (next unused index), then (non-strict only) the role's
/// default response. Hash lookups are interleaving-independent; sequence
/// scripts are only deterministic when calls for that role are serialized.
class MockTransport : public Transport {
 public:
  explicit MockTransport(const std::vector<FixtureEntry>& entries,
                         bool strict = true);
  static std::shared_ptr<MockTransport> from_file(
      const std::filesystem::path& path, bool strict = true);

  Reply post(Role role, const json& request) override;

 private:
  std::map<std::pair<Role, std::string>, json> by_hash_;
  std::map<std::pair<Role, std::size_t>, json> by_sequence_;
  std::map<Role, json> defaults_;
  bool strict_;
  std::mutex mutex_;
  std::map<Role, std::size_t> next_index_;
};

/// Forwards to an inner transport and remembers every (request, response)
/// pair as a hash-keyed fixture.
class RecordingTransport : public Transport {
 public:
  explicit RecordingTransport(std::shared_ptr<Transport> inner);
  Reply post(Role role, const json& request) override;

  /// Sorted by (role, request hash); duplicates collapsed.
  std::vector<FixtureEntry> fixtures() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::shared_ptr<Transport> inner_;
  mutable std::mutex mutex_;
  std::map<std::pair<Role, std::string>, json> recorded_;
};

struct BackendExchange {
  Role role = Role::thinker;
  json request;
  json response;
  double latency_ms = 0.0;
  int attempts = 1;
};

class ExchangeLog {
 public:
  void record(BackendExchange exchange);
  /// Ordered by (role, canonical request, canonical response) so logs from
  /// concurrent runs compare equal.
  std::vector<BackendExchange> sorted() const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::vector<BackendExchange> entries_;
};

/// Common plumbing for the wire-backed role clients.
class WireClient {
 public:
  WireClient(std::shared_ptr<Transport> transport,
             std::shared_ptr<ExchangeLog> log);

 protected:
  json call(Role role, const json& request);

 private:
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<ExchangeLog> log_;
};

class WireObserver : public Observer, private WireClient {
 public:
  using WireClient::WireClient;
  std::vector<Entity> detect(
      const ImageRef& image,
      const std::optional<std::string>& grounding) override;
};

class WireThinker : public Thinker, private WireClient {
 public:
  using WireClient::WireClient;
  std::string complete(const std::string& prompt) override;
};

class WireVerifier : public Verifier, private WireClient {
 public:
  using WireClient::WireClient;
  VerifierAnswer answer(const ImageRef& image,
                        const std::string& question) override;
};

/// Pins the vector dimension on first use; any later mismatch is a
/// protocol error.
class WireEmbedder : public Embedder, private WireClient {
 public:
  using WireClient::WireClient;
  EmbeddingVector embed_text(const std::string& text) override;
  EmbeddingVector embed_image(const Image& image) override;

 private:
  EmbeddingVector checked(EmbeddingVector v);
  std::atomic<std::size_t> dim_{0};
};

}  // namespace elegant::backends
