#pragma once

// A synthetic multimodal model and text-to-image pair with closed-form
// logits. Scenes are sets of objects; captions follow the frame
// "a <obj> and a <obj> ... <eos>". At an object slot
//
//     logit(obj) = w_vis * [obj in scene] + w_prior * [obj in prior_set] + noise
//
// so objects in the prior set are mentioned even when absent whenever
// w_prior > w_vis. Rendering a caption gives a scene holding exactly the
// mentioned objects, which raises a hallucinated object's logit by w_vis in
// the rendered image.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "convis/backend.hpp"
#include "convis/rng.hpp"

namespace convis::testbed {

struct WorldSpec {
  std::vector<std::string> objects;
  std::vector<std::string> prior_set;
  double w_vis = 2.0;
  double w_prior = 2.5;
  double noise_sigma = 0.0;
  double infidelity = 0.0;  // per-object drop (and spurious add) probability of the renderer
  double no_logit = 1.0;    // score of "no" in yes/no answers
  int mentions = 3;         // object mentions for a plain prompt
  int detail_mentions = 4;  // object mentions when the prompt contains "detail"
  int min_objects = 4;      // scene sizes drawn by make_corpus
  int max_objects = 6;
  std::uint64_t rng_seed = 0;

  void validate() const;
  static WorldSpec default_world();
};

void to_json(nlohmann::json& j, const WorldSpec& w);
void from_json(const nlohmann::json& j, WorldSpec& w);
WorldSpec load_world(const std::string& path);

struct SceneImage {
  std::string id;
  std::vector<std::string> objects;  // sorted, unique

  bool contains(const std::string& obj) const;
  friend bool operator==(const SceneImage&, const SceneImage&) = default;
};

/// "id:obj1,obj2" (the id part is optional).
std::string scene_ref(const SceneImage& scene);

struct CorpusItem {
  SceneImage image;
  std::vector<std::string> annotation;
};

class World {
 public:
  explicit World(WorldSpec spec);

  const WorldSpec& spec() const { return spec_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  std::optional<TokenId> token_of(const std::string& word) const;
  bool is_object(TokenId id) const { return id >= first_object_ && id < first_object_ + num_objects(); }
  TokenId num_objects() const { return static_cast<TokenId>(spec_.objects.size()); }
  const std::string& object_name(TokenId id) const;

  /// Lowercased words and punctuation marks; unknown words map to <unk>.
  TokenSequence tokenize(const std::string& text) const;
  /// Space-joined token texts; EOS is dropped.
  std::string detokenize(std::span<const TokenId> ids) const;

  LogitVector synth_logits(const SceneImage& image, std::span<const TokenId> prompt,
                           std::span<const TokenId> prefix) const;

  /// Scene holding the objects the caption mentions, subject to the
  /// infidelity knob. An unparseable caption yields an empty scene.
  SceneImage faithful_t2i(const std::string& caption, std::uint64_t seed) const;

  /// Parses "id:obj1,obj2"; a missing id is derived from the object list.
  SceneImage parse_scene_ref(const std::string& ref) const;

  /// Object names mentioned by a caption, in order of appearance.
  std::vector<std::string> mentioned_objects(std::span<const TokenId> caption) const;

  static constexpr TokenId kEos = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kArticle = 2;
  static constexpr TokenId kAnd = 3;
  static constexpr TokenId kYes = 4;
  static constexpr TokenId kNo = 5;
  static constexpr TokenId kDetail = 6;

 private:
  double noise(const std::string& image_id, std::size_t position, TokenId token) const;
  double object_score(const SceneImage& image, TokenId obj, std::size_t position) const;

  WorldSpec spec_;
  Vocabulary vocab_;
  std::map<std::string, TokenId> ids_;
  std::vector<bool> prior_;  // per object index
  TokenId first_object_ = 7;
};

std::vector<CorpusItem> make_corpus(const World& world, std::size_t n_images, RngStream& rng);

struct PopeQuestion {
  SceneImage image;
  std::string object;
  bool label_yes = false;
  std::string prompt;
};

/// One present and one absent object per scene; absent objects are drawn
/// from the prior set when possible.
std::vector<PopeQuestion> make_pope_questions(const World& world, const std::vector<CorpusItem>& corpus,
                                              RngStream& rng);

/// In-process Backend over a World; thread-safe.
class TestbedBackend : public Backend {
 public:
  explicit TestbedBackend(WorldSpec spec) : world_(std::move(spec)) {}

  const World& world() const { return world_; }
  ImageHandle add_scene(const SceneImage& scene);
  std::optional<SceneImage> scene(const std::string& id) const;

  const Vocabulary& vocabulary() const override { return world_.vocabulary(); }
  LogitVector logits(const ImageHandle& image, std::span<const TokenId> prompt,
                     std::span<const TokenId> prefix) override;
  TokenSequence tokenize(const std::string& text) override { return world_.tokenize(text); }
  std::string detokenize(std::span<const TokenId> ids) override;
  ImageHandle register_image(const std::optional<std::string>& bytes_b64,
                             const std::optional<std::string>& ref) override;
  ImageHandle generate_image(const std::string& caption, std::uint64_t seed) override;
  std::vector<std::string> capabilities() const override;
  bool concurrent_safe() const override { return true; }

 private:
  World world_;
  mutable std::mutex mu_;
  std::map<std::string, SceneImage> scenes_;
};

}  // namespace convis::testbed
