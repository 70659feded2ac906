#pragma once

// Capability interfaces for the four model roles. The pipeline and the
// metric code only ever see these; wire.hpp provides the HTTP/JSON and
// mock-playback implementations.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "elegant/raster.hpp"
#include "elegant/scene.hpp"

namespace elegant::backends {

enum class Role { observer, thinker, verifier, embedder };

std::string to_string(Role role);
Role role_from_string(std::string_view name);

/// How an image is handed to a backend. `uri` is sent verbatim so mock keys
/// stay stable across working directories; `inline_b64` takes precedence
/// when set.
struct ImageRef {
  std::string image_id;
  std::string uri;
  std::optional<std::string> inline_b64;
  int width = 0;
  int height = 0;
};

struct VerifierAnswer {
  std::string text;
  std::optional<double> yes_probability;

  friend bool operator==(const VerifierAnswer&,
                         const VerifierAnswer&) = default;
};

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const EmbeddingVector&,
                         const EmbeddingVector&) = default;
};

class Observer {
 public:
  virtual ~Observer() = default;
  /// Entities get ids 0..n-1 in response order and source = detected.
  virtual std::vector<Entity> detect(
      const ImageRef& image, const std::optional<std::string>& grounding) = 0;
};

class Thinker {
 public:
  virtual ~Thinker() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

class Verifier {
 public:
  virtual ~Verifier() = default;
  virtual VerifierAnswer answer(const ImageRef& image,
                                const std::string& question) = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed_text(const std::string& text) = 0;
  virtual EmbeddingVector embed_image(const Image& image) = 0;
};

}  // namespace elegant::backends
