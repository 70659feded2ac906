#include "elegant/wire.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "elegant/digest.hpp"
#include "elegant/errors.hpp"
#include "httplib.h"

namespace elegant::backends {

std::string to_string(Role role) {
  switch (role) {
    case Role::observer: return "observer";
    case Role::thinker: return "thinker";
    case Role::verifier: return "verifier";
    case Role::embedder: return "embedder";
  }
  return "thinker";
}

Role role_from_string(std::string_view name) {
  if (name == "observer") return Role::observer;
  if (name == "thinker") return Role::thinker;
  if (name == "verifier") return Role::verifier;
  if (name == "embedder") return Role::embedder;
  throw ValidationError("unknown backend role '" + std::string(name) + "'");
}

std::string endpoint_path(Role role) {
  switch (role) {
    case Role::observer: return "/v1/detect";
    case Role::thinker: return "/v1/complete";
    case Role::verifier: return "/v1/vqa";
    case Role::embedder: return "/v1/embed";
  }
  return "/v1/complete";
}

std::string canonical_json(const json& value) { return value.dump(); }

std::string request_sha256(const json& request) {
  return sha256_hex(canonical_json(request));
}

namespace wire {

namespace {

void put_image(json& req, const ImageRef& image) {
  req["image_id"] = image.image_id;
  if (image.inline_b64) {
    req["image_b64"] = *image.inline_b64;
  } else {
    req["image_uri"] = image.uri;
  }
}

[[noreturn]] void schema_error(const std::string& what) {
  throw ProtocolError("malformed backend response: " + what);
}

const json& require(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key)) {
    schema_error(std::string("missing '") + key + "'");
  }
  return body[key];
}

double unit_interval(const json& v, const char* what) {
  if (!v.is_number()) schema_error(std::string(what) + " is not a number");
  const double x = v.get<double>();
  if (!(x >= 0.0 && x <= 1.0)) {
    schema_error(std::string(what) + " outside [0,1]");
  }
  return x;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

json detect_request(const ImageRef& image,
                    const std::optional<std::string>& grounding) {
  json req = json::object();
  put_image(req, image);
  if (grounding && !grounding->empty()) req["grounding_text"] = *grounding;
  return req;
}

json complete_request(const std::string& prompt) {
  if (prompt.empty()) throw ValidationError("thinker prompt is empty");
  return {{"prompt", prompt}};
}

json vqa_request(const ImageRef& image, const std::string& question) {
  if (question.empty()) throw ValidationError("verifier question is empty");
  json req = json::object();
  put_image(req, image);
  req["question"] = question;
  return req;
}

json embed_text_request(const std::string& text) {
  if (text.empty()) throw ValidationError("embed: empty text");
  return {{"kind", "text"}, {"text", text}};
}

json embed_image_request(const Image& image) {
  if (image.pixels.empty()) throw ValidationError("embed: empty image");
  return {{"kind", "image"}, {"payload_b64", base64_encode(encode_pnm(image))}};
}

std::vector<Entity> parse_detect_response(const json& body,
                                          const ImageRef& image) {
  const json& entities = require(body, "entities");
  if (!entities.is_array()) schema_error("'entities' is not an array");
  std::vector<Entity> out;
  out.reserve(entities.size());
  EntityId next_id = 0;
  for (const auto& e : entities) {
    const json& label = require(e, "label");
    if (!label.is_string()) schema_error("entity label is not a string");
    BBox box;
    try {
      box = require(e, "bbox").get<BBox>();
    } catch (const ValidationError& err) {
      schema_error(err.what());
    }
    if (image.width > 0 && image.height > 0 &&
        !box.within(image.width, image.height)) {
      schema_error("entity box outside image bounds");
    }
    const double conf = unit_interval(require(e, "confidence"), "confidence");
    try {
      out.push_back(make_entity(next_id++, label.get<std::string>(), box, conf,
                                EntitySource::detected));
    } catch (const ValidationError& err) {
      schema_error(err.what());
    }
  }
  return out;
}

std::string parse_complete_response(const json& body) {
  const json& text = require(body, "text");
  if (!text.is_string()) schema_error("'text' is not a string");
  auto s = text.get<std::string>();
  if (blank(s)) throw EmptyResponseError("thinker returned an empty completion");
  return s;
}

VerifierAnswer parse_vqa_response(const json& body) {
  const json& text = require(body, "text");
  if (!text.is_string()) schema_error("'text' is not a string");
  VerifierAnswer out{text.get<std::string>(), std::nullopt};
  if (blank(out.text)) throw EmptyResponseError("verifier returned an empty answer");
  if (body.contains("yes_probability") && !body["yes_probability"].is_null()) {
    out.yes_probability = unit_interval(body["yes_probability"], "yes_probability");
  }
  return out;
}

EmbeddingVector parse_embed_response(const json& body) {
  const json& vec = require(body, "vector");
  if (!vec.is_array() || vec.empty()) schema_error("'vector' must be a non-empty array");
  EmbeddingVector out;
  out.values.reserve(vec.size());
  for (const auto& v : vec) {
    if (!v.is_number()) schema_error("vector entry is not a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) schema_error("vector entry is not finite");
    out.values.push_back(x);
  }
  return out;
}

}  // namespace wire

void BackendConfig::validate() const {
  if (!(timeout_s > 0.0)) throw ValidationError("backend timeout must be > 0");
  if (max_retries < 0) throw ValidationError("backend max_retries must be >= 0");
  if (backoff_initial_s < 0.0) throw ValidationError("backend backoff must be >= 0");
  if (mode == BackendMode::live && url.empty()) {
    throw ValidationError("live backend requires a URL");
  }
}

HttpTransport::HttpTransport(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto scheme_end = config_.url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("backend URL needs a scheme: " + config_.url);
  }
  const auto path_start = config_.url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.url.substr(0, path_start);
  base_path_ = path_start == std::string::npos ? "" : config_.url.substr(path_start);
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

Reply HttpTransport::post(Role role, const json& request) {
  const std::string path = base_path_ + endpoint_path(role);
  const std::string body = canonical_json(request);
  const auto timeout = std::chrono::duration<double>(config_.timeout_s);
  const auto timeout_us =
      std::chrono::duration_cast<std::chrono::microseconds>(timeout);

  httplib::Headers headers;
  if (config_.token) headers.emplace("Authorization", "Bearer " + *config_.token);

  std::string last_failure;
  bool last_timed_out = false;
  const int attempts_allowed = config_.max_retries + 1;
  for (int attempt = 1; attempt <= attempts_allowed; ++attempt) {
    if (attempt > 1) {
      const double delay = config_.backoff_initial_s * std::pow(2.0, attempt - 2);
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    // One client per attempt: httplib clients are not safe to share across
    // threads.
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(timeout_us);
    client.set_read_timeout(timeout_us);
    client.set_write_timeout(timeout_us);

    const auto started = std::chrono::steady_clock::now();
    auto result = client.Post(path, headers, body, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - started;

    if (!result) {
      const auto err = result.error();
      last_timed_out = err == httplib::Error::ConnectionTimeout ||
                       ((err == httplib::Error::Read || err == httplib::Error::Write) &&
                        elapsed >= timeout);
      last_failure = httplib::to_string(err);
      continue;
    }
    const int status = result->status;
    if (status == 408 || status == 429 || status >= 500) {
      last_timed_out = status == 408;
      last_failure = "HTTP " + std::to_string(status);
      continue;
    }
    if (status < 200 || status >= 300) {
      throw ProtocolError(to_string(role) + " backend rejected request: HTTP " +
                          std::to_string(status) + " " + result->body);
    }
    json parsed = json::parse(result->body, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) {
      throw ProtocolError(to_string(role) + " backend returned invalid JSON");
    }
    return {std::move(parsed), attempt};
  }
  const std::string msg = to_string(role) + " backend failed after " +
                          std::to_string(attempts_allowed) + " attempt(s): " +
                          last_failure;
  if (last_timed_out) throw TimeoutError(msg);
  throw BackendError(msg);
}

std::vector<FixtureEntry> parse_fixtures(const json& doc) {
  if (!doc.is_array()) throw ValidationError("fixture file must be a JSON array");
  std::vector<FixtureEntry> out;
  for (const auto& item : doc) {
    FixtureEntry e;
    e.role = role_from_string(item.at("role").get<std::string>());
    if (item.contains("request_sha256")) {
      e.request_sha256 = item["request_sha256"].get<std::string>();
    }
    if (item.contains("sequence_index")) {
      e.sequence_index = item["sequence_index"].get<std::size_t>();
    }
    e.is_default = item.value("default", false);
    const int keys = e.request_sha256.has_value() + e.sequence_index.has_value() +
                     static_cast<int>(e.is_default);
    if (keys != 1) {
      throw ValidationError(
          "fixture entry needs exactly one of request_sha256, sequence_index, "
          "default");
    }
    e.response = item.at("response");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<FixtureEntry> load_fixtures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fixture file " + path.string());
  json doc = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw ValidationError("fixture file is not JSON: " + path.string());
  return parse_fixtures(doc);
}

json fixtures_to_json(const std::vector<FixtureEntry>& entries) {
  json out = json::array();
  for (const auto& e : entries) {
    json item = {{"role", to_string(e.role)}, {"response", e.response}};
    if (e.request_sha256) item["request_sha256"] = *e.request_sha256;
    if (e.sequence_index) item["sequence_index"] = *e.sequence_index;
    if (e.is_default) item["default"] = true;
    out.push_back(std::move(item));
  }
  return out;
}

MockTransport::MockTransport(const std::vector<FixtureEntry>& entries, bool strict)
    : strict_(strict) {
  for (const auto& e : entries) {
    bool inserted = true;
    if (e.request_sha256) {
      inserted = by_hash_.emplace(std::pair{e.role, *e.request_sha256}, e.response).second;
    } else if (e.sequence_index) {
      inserted = by_sequence_.emplace(std::pair{e.role, *e.sequence_index}, e.response).second;
    } else {
      inserted = defaults_.emplace(e.role, e.response).second;
    }
    if (!inserted) {
      throw ConflictError("duplicate fixture entry for role " + to_string(e.role));
    }
  }
}

std::shared_ptr<MockTransport> MockTransport::from_file(
    const std::filesystem::path& path, bool strict) {
  return std::make_shared<MockTransport>(load_fixtures(path), strict);
}

Reply MockTransport::post(Role role, const json& request) {
  const std::string key = request_sha256(request);
  if (auto it = by_hash_.find({role, key}); it != by_hash_.end()) {
    return {it->second, 1};
  }
  {
    std::lock_guard lock(mutex_);
    std::size_t& next = next_index_[role];
    if (auto it = by_sequence_.find({role, next}); it != by_sequence_.end()) {
      ++next;
      return {it->second, 1};
    }
  }
  if (!strict_) {
    if (auto it = defaults_.find(role); it != defaults_.end()) return {it->second, 1};
  }
  throw MissingFixtureError("no " + to_string(role) + " fixture for request " + key);
}

RecordingTransport::RecordingTransport(std::shared_ptr<Transport> inner)
    : inner_(std::move(inner)) {}

Reply RecordingTransport::post(Role role, const json& request) {
  Reply reply = inner_->post(role, request);
  std::lock_guard lock(mutex_);
  recorded_.emplace(std::pair{role, request_sha256(request)}, reply.body);
  return reply;
}

std::vector<FixtureEntry> RecordingTransport::fixtures() const {
  std::lock_guard lock(mutex_);
  std::vector<FixtureEntry> out;
  out.reserve(recorded_.size());
  for (const auto& [key, response] : recorded_) {
    FixtureEntry e;
    e.role = key.first;
    e.request_sha256 = key.second;
    e.response = response;
    out.push_back(std::move(e));
  }
  return out;
}

void RecordingTransport::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write fixture file " + path.string());
  out << fixtures_to_json(fixtures()).dump(1) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

void ExchangeLog::record(BackendExchange exchange) {
  std::lock_guard lock(mutex_);
  entries_.push_back(std::move(exchange));
}

std::vector<BackendExchange> ExchangeLog::sorted() const {
  std::vector<BackendExchange> out;
  {
    std::lock_guard lock(mutex_);
    out = entries_;
  }
  auto key = [](const BackendExchange& e) {
    return std::tuple(e.role, canonical_json(e.request), canonical_json(e.response));
  };
  std::stable_sort(out.begin(), out.end(),
                   [&](const auto& a, const auto& b) { return key(a) < key(b); });
  return out;
}

std::size_t ExchangeLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

WireClient::WireClient(std::shared_ptr<Transport> transport,
                       std::shared_ptr<ExchangeLog> log)
    : transport_(std::move(transport)), log_(std::move(log)) {
  if (!transport_) throw ValidationError("wire client needs a transport");
}

json WireClient::call(Role role, const json& request) {
  const auto started = std::chrono::steady_clock::now();
  Reply reply = transport_->post(role, request);
  if (log_) {
    const std::chrono::duration<double, std::milli> ms =
        std::chrono::steady_clock::now() - started;
    log_->record({role, request, reply.body, ms.count(), reply.attempts});
  }
  return std::move(reply.body);
}

std::vector<Entity> WireObserver::detect(const ImageRef& image,
                                         const std::optional<std::string>& grounding) {
  return wire::parse_detect_response(
      call(Role::observer, wire::detect_request(image, grounding)), image);
}

std::string WireThinker::complete(const std::string& prompt) {
  return wire::parse_complete_response(
      call(Role::thinker, wire::complete_request(prompt)));
}

VerifierAnswer WireVerifier::answer(const ImageRef& image,
                                    const std::string& question) {
  return wire::parse_vqa_response(
      call(Role::verifier, wire::vqa_request(image, question)));
}

EmbeddingVector WireEmbedder::checked(EmbeddingVector v) {
  std::size_t expected = 0;
  if (!dim_.compare_exchange_strong(expected, v.dim()) && expected != v.dim()) {
    throw ProtocolError("embedder dimension changed from " + std::to_string(expected) +
                        " to " + std::to_string(v.dim()));
  }
  return v;
}

EmbeddingVector WireEmbedder::embed_text(const std::string& text) {
  return checked(wire::parse_embed_response(
      call(Role::embedder, wire::embed_text_request(text))));
}

EmbeddingVector WireEmbedder::embed_image(const Image& image) {
  return checked(wire::parse_embed_response(
      call(Role::embedder, wire::embed_image_request(image))));
}

}  // namespace elegant::backends
