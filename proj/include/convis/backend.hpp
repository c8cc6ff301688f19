#pragma once

// The inference boundary. The decoding engine never sees model weights or
// pixels: it talks to a LogitSource (the multimodal model) and an
// ImageGenerator (the text-to-image model) through opaque image handles.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convis/core.hpp"

namespace convis {

enum class ImageOrigin { original, generated };

struct ImageHandle {
  std::string id;
  ImageOrigin origin = ImageOrigin::original;
  std::optional<std::string> source_caption;  // set for generated images

  friend bool operator==(const ImageHandle&, const ImageHandle&) = default;
};

/// Capability names as they appear in the handshake.
inline constexpr const char* kCapLogits = "logits";
inline constexpr const char* kCapTokenize = "tokenize";
inline constexpr const char* kCapGenerateImage = "generate_image";

class LogitSource {
 public:
  virtual ~LogitSource() = default;

  virtual const Vocabulary& vocabulary() const = 0;

  /// Next-token logits for (image, prompt, prefix). Implementations must
  /// return exactly vocabulary().size entries.
  virtual LogitVector logits(const ImageHandle& image, std::span<const TokenId> prompt,
                             std::span<const TokenId> prefix) = 0;

  virtual TokenSequence tokenize(const std::string& text) = 0;
  virtual std::string detokenize(std::span<const TokenId> ids) = 0;

  /// Makes an original image known to the backend. `ref` is a backend-
  /// specific reference (a path, a scene description, ...).
  virtual ImageHandle register_image(const std::optional<std::string>& bytes_b64,
                                     const std::optional<std::string>& ref) = 0;

  /// True when logits() may be called from several threads at once.
  virtual bool concurrent_safe() const { return false; }
};

class ImageGenerator {
 public:
  virtual ~ImageGenerator() = default;
  virtual ImageHandle generate_image(const std::string& caption, std::uint64_t seed) = 0;
};

/// Both roles behind one session; the testbed and the protocol client are
/// Backends, and the same object may serve as model and generator.
class Backend : public LogitSource, public ImageGenerator {
 public:
  virtual std::vector<std::string> capabilities() const = 0;
  bool has_capability(const std::string& cap) const;
};

}  // namespace convis
