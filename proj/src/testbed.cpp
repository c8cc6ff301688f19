#include "convis/testbed.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "convis/hash.hpp"

namespace convis::testbed {

using nlohmann::json;

// ------------------------------------------------------------------ world spec

void WorldSpec::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::invalid_argument, "world spec: " + m); };
  if (objects.empty()) bad("object list is empty");
  std::set<std::string> names;
  for (const auto& o : objects) {
    if (o.empty() || !std::all_of(o.begin(), o.end(), [](unsigned char c) { return std::islower(c) || std::isdigit(c) || c == '_'; })) {
      bad("object names must be lowercase words: '" + o + "'");
    }
    if (o == "a" || o == "and" || o == "yes" || o == "no" || o == "detail") bad("object name collides with grammar word '" + o + "'");
    if (!names.insert(o).second) bad("duplicate object '" + o + "'");
  }
  for (const auto& p : prior_set) {
    if (!names.count(p)) bad("prior object '" + p + "' is not in the object list");
  }
  if (!(w_vis > 0.0)) bad("w_vis must be positive");
  if (!std::isfinite(w_prior)) bad("w_prior must be finite");
  if (!(noise_sigma >= 0.0)) bad("noise_sigma must be non-negative");
  if (!(infidelity >= 0.0 && infidelity <= 1.0)) bad("infidelity must lie in [0, 1]");
  if (mentions < 1 || detail_mentions < 1) bad("mention counts must be positive");
  if (static_cast<std::size_t>(std::max(mentions, detail_mentions)) > objects.size()) bad("more mentions than objects");
  if (min_objects < 0 || max_objects < min_objects || static_cast<std::size_t>(max_objects) > objects.size()) {
    bad("scene size range is invalid");
  }
}

WorldSpec WorldSpec::default_world() {
  WorldSpec w;
  w.objects = {"person", "bicycle", "car",  "motorcycle", "bus",  "truck", "bench", "bird",
               "cat",    "dog",     "horse", "umbrella",  "bottle", "cup",   "fork",  "knife",
               "spoon",  "bowl",    "chair", "couch",     "bed",  "laptop", "clock", "vase"};
  w.prior_set = {"chair", "cup", "fork"};
  return w;
}

void to_json(json& j, const WorldSpec& w) {
  j = json{{"objects", w.objects},
           {"prior_set", w.prior_set},
           {"w_vis", w.w_vis},
           {"w_prior", w.w_prior},
           {"noise_sigma", w.noise_sigma},
           {"infidelity", w.infidelity},
           {"no_logit", w.no_logit},
           {"mentions", w.mentions},
           {"detail_mentions", w.detail_mentions},
           {"min_objects", w.min_objects},
           {"max_objects", w.max_objects},
           {"rng_seed", w.rng_seed}};
}

void from_json(const json& j, WorldSpec& w) {
  w = WorldSpec::default_world();
  if (!j.is_object()) fail(ErrorKind::invalid_argument, "world spec must be a JSON object");
  static const std::set<std::string> known = {"objects", "prior_set", "w_vis", "w_prior", "noise_sigma", "infidelity",
                                              "no_logit", "mentions", "detail_mentions", "min_objects", "max_objects",
                                              "rng_seed"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) fail(ErrorKind::invalid_argument, "world spec: unknown key '" + k + "'");
  }
  try {
    if (j.contains("objects")) w.objects = j.at("objects").get<std::vector<std::string>>();
    if (j.contains("prior_set")) w.prior_set = j.at("prior_set").get<std::vector<std::string>>();
    w.w_vis = j.value("w_vis", w.w_vis);
    w.w_prior = j.value("w_prior", w.w_prior);
    w.noise_sigma = j.value("noise_sigma", w.noise_sigma);
    w.infidelity = j.value("infidelity", w.infidelity);
    w.no_logit = j.value("no_logit", w.no_logit);
    w.mentions = j.value("mentions", w.mentions);
    w.detail_mentions = j.value("detail_mentions", w.detail_mentions);
    w.min_objects = j.value("min_objects", w.min_objects);
    w.max_objects = j.value("max_objects", w.max_objects);
    w.rng_seed = j.value("rng_seed", w.rng_seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("world spec: ") + e.what());
  }
  w.validate();
}

WorldSpec load_world(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::invalid_argument, "cannot open world spec " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, "world spec " + path + ": " + e.what());
  }
  return j.get<WorldSpec>();
}

// ------------------------------------------------------------------ scenes

bool SceneImage::contains(const std::string& obj) const {
  return std::binary_search(objects.begin(), objects.end(), obj);
}

std::string scene_ref(const SceneImage& scene) {
  std::string out = scene.id + ":";
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (i) out += ',';
    out += scene.objects[i];
  }
  return out;
}

// ------------------------------------------------------------------ world

World::World(WorldSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  vocab_.token_text = {"<eos>", "<unk>", "a", "and", "yes", "no", "detail"};
  first_object_ = static_cast<TokenId>(vocab_.token_text.size());
  for (const auto& o : spec_.objects) vocab_.token_text.push_back(o);
  vocab_.size = vocab_.token_text.size();
  vocab_.eos_id = kEos;
  vocab_.validate();
  for (std::size_t i = 0; i < vocab_.size; ++i) ids_[vocab_.token_text[i]] = static_cast<TokenId>(i);
  prior_.assign(spec_.objects.size(), false);
  for (const auto& p : spec_.prior_set) prior_[static_cast<std::size_t>(ids_.at(p) - first_object_)] = true;
}

std::optional<TokenId> World::token_of(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end() || it->second == kEos || it->second == kUnk) return std::nullopt;
  return it->second;
}

const std::string& World::object_name(TokenId id) const {
  if (!is_object(id)) fail(ErrorKind::invalid_argument, "token " + std::to_string(id) + " is not an object");
  return vocab_.token_text[static_cast<std::size_t>(id)];
}

TokenSequence World::tokenize(const std::string& text) const {
  TokenSequence out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    out.push_back(token_of(word).value_or(kUnk));
    word.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '_') {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (!std::isspace(c)) out.push_back(kUnk);
    }
  }
  flush();
  return out;
}

std::string World::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == kEos) continue;
    if (!out.empty()) out += ' ';
    out += vocab_.text(id);
  }
  return out;
}

double World::noise(const std::string& image_id, std::size_t position, TokenId token) const {
  if (spec_.noise_sigma == 0.0) return 0.0;
  std::uint64_t key = mix_seed(spec_.rng_seed, stable_hash64(image_id));
  key = mix_seed(key, position);
  key = mix_seed(key, static_cast<std::uint64_t>(token));
  return spec_.noise_sigma * normal_from_key(key);
}

double World::object_score(const SceneImage& image, TokenId obj, std::size_t position) const {
  const auto idx = static_cast<std::size_t>(obj - first_object_);
  double s = 0.0;
  if (image.contains(spec_.objects[idx])) s += spec_.w_vis;
  if (prior_[idx]) s += spec_.w_prior;
  return s + noise(image.id, position, obj);
}

LogitVector World::synth_logits(const SceneImage& image, std::span<const TokenId> prompt,
                                std::span<const TokenId> prefix) const {
  vocab_.check_sequence(prompt);
  vocab_.check_sequence(prefix);
  std::vector<double> l(vocab_.size, kMasked);
  auto bad_prefix = [&](const std::string& why) {
    throw Error(ErrorKind::invalid_argument, "testbed: unparseable prefix: " + why, "bad_prefix");
  };

  const bool vqa = std::find(prompt.begin(), prompt.end(), kYes) != prompt.end();
  if (vqa) {
    auto obj = std::find_if(prompt.begin(), prompt.end(), [&](TokenId t) { return is_object(t); });
    if (obj == prompt.end()) throw Error(ErrorKind::invalid_argument, "testbed: yes/no prompt names no object", "bad_prompt");
    if (prefix.empty()) {
      l[kYes] = object_score(image, *obj, 0);
      l[kNo] = spec_.no_logit;
    } else if (prefix.size() == 1 && (prefix[0] == kYes || prefix[0] == kNo)) {
      l[kEos] = 0.0;
    } else {
      bad_prefix("answer must be a single yes/no");
    }
    return LogitVector(std::move(l));
  }

  const bool detail = std::find(prompt.begin(), prompt.end(), kDetail) != prompt.end();
  const auto wanted = static_cast<std::size_t>(detail ? spec_.detail_mentions : spec_.mentions);
  std::vector<bool> used(spec_.objects.size(), false);
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const TokenId t = prefix[i];
    switch (i % 3) {
      case 0:
        if (t != kArticle) bad_prefix("expected 'a' at position " + std::to_string(i));
        break;
      case 1: {
        if (!is_object(t)) bad_prefix("expected an object at position " + std::to_string(i));
        const auto idx = static_cast<std::size_t>(t - first_object_);
        if (used[idx]) bad_prefix("object repeated at position " + std::to_string(i));
        used[idx] = true;
        break;
      }
      default:
        if (t != kAnd || i / 3 + 1 >= wanted) bad_prefix("sentence should have ended at position " + std::to_string(i));
        break;
    }
  }

  const std::size_t pos = prefix.size();
  switch (pos % 3) {
    case 0:
      l[kArticle] = 0.0;
      break;
    case 1:
      for (TokenId t = first_object_; t < first_object_ + num_objects(); ++t) {
        if (!used[static_cast<std::size_t>(t - first_object_)]) l[static_cast<std::size_t>(t)] = object_score(image, t, pos);
      }
      break;
    default:
      if (pos / 3 + 1 >= wanted) {
        l[kEos] = 0.0;
      } else {
        l[kAnd] = 0.0;
      }
      break;
  }
  return LogitVector(std::move(l));
}

std::vector<std::string> World::mentioned_objects(std::span<const TokenId> caption) const {
  std::vector<std::string> out;
  for (TokenId t : caption) {
    if (is_object(t)) out.push_back(object_name(t));
  }
  return out;
}

SceneImage World::faithful_t2i(const std::string& caption, std::uint64_t seed) const {
  SceneImage img;
  img.id = "gen-" + sha256_hex(caption + '\x1f' + std::to_string(seed)).substr(0, 16);
  const TokenSequence toks = tokenize(caption);
  if (std::find(toks.begin(), toks.end(), kUnk) != toks.end()) {
    spdlog::warn("testbed t2i: unparseable caption '{}', rendering an empty scene", caption);
    return img;
  }
  std::set<std::string> objs;
  for (const auto& o : mentioned_objects(toks)) objs.insert(o);
  if (spec_.infidelity > 0.0) {
    RngStream rng(mix_seed(mix_seed(spec_.rng_seed, stable_hash64(caption)), seed));
    std::set<std::string> kept;
    std::size_t adds = 0;
    for (const auto& o : objs) {
      if (rng.uniform() >= spec_.infidelity) kept.insert(o);
      if (rng.uniform() < spec_.infidelity) ++adds;
    }
    std::vector<std::string> absent;
    for (const auto& o : spec_.objects) {
      if (!objs.count(o)) absent.push_back(o);
    }
    for (std::size_t k = 0; k < adds && !absent.empty(); ++k) {
      const auto pick = rng.below(absent.size());
      kept.insert(absent[pick]);
      absent.erase(absent.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    objs = std::move(kept);
  }
  img.objects.assign(objs.begin(), objs.end());
  return img;
}

SceneImage World::parse_scene_ref(const std::string& ref) const {
  SceneImage img;
  std::string list = ref;
  if (const auto colon = ref.find(':'); colon != std::string::npos) {
    img.id = ref.substr(0, colon);
    list = ref.substr(colon + 1);
  }
  std::set<std::string> objs;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    std::string name = list.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    name.erase(0, name.find_first_not_of(' '));
    name.erase(name.find_last_not_of(' ') + 1);
    if (!name.empty()) {
      auto t = token_of(name);
      if (!t || !is_object(*t)) throw Error(ErrorKind::invalid_argument, "testbed: unknown object '" + name + "'", "bad_ref");
      objs.insert(name);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  img.objects.assign(objs.begin(), objs.end());
  if (img.id.empty()) img.id = "scene-" + sha256_hex(scene_ref(img)).substr(0, 12);
  return img;
}

// ------------------------------------------------------------------ corpus

std::vector<CorpusItem> make_corpus(const World& world, std::size_t n_images, RngStream& rng) {
  const WorldSpec& spec = world.spec();
  std::vector<CorpusItem> out;
  out.reserve(n_images);
  char tag[17];
  std::snprintf(tag, sizeof tag, "%016llx", static_cast<unsigned long long>(rng.seed()));
  for (std::size_t i = 0; i < n_images; ++i) {
    const auto span = static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1);
    const auto k = static_cast<std::size_t>(spec.min_objects) + rng.below(span);
    std::vector<std::string> pool = spec.objects;
    for (std::size_t j = 0; j < k; ++j) {
      const auto pick = j + rng.below(pool.size() - j);
      std::swap(pool[j], pool[pick]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    CorpusItem item;
    item.image.id = std::string("scene-") + tag + "-" + std::to_string(i);
    item.image.objects = pool;
    item.annotation = pool;
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<PopeQuestion> make_pope_questions(const World& world, const std::vector<CorpusItem>& corpus,
                                              RngStream& rng) {
  const WorldSpec& spec = world.spec();
  std::vector<PopeQuestion> out;
  auto question = [](const std::string& obj) {
    return "Is there a " + obj + " in the image? Please answer yes or no.";
  };
  for (const auto& item : corpus) {
    if (!item.image.objects.empty()) {
      const auto& obj = item.image.objects[rng.below(item.image.objects.size())];
      out.push_back({item.image, obj, true, question(obj)});
    }
    std::vector<std::string> absent_prior, absent;
    for (const auto& o : spec.objects) {
      if (item.image.contains(o)) continue;
      absent.push_back(o);
      if (std::find(spec.prior_set.begin(), spec.prior_set.end(), o) != spec.prior_set.end()) absent_prior.push_back(o);
    }
    const auto& pool = absent_prior.empty() ? absent : absent_prior;
    if (!pool.empty()) {
      const auto& obj = pool[rng.below(pool.size())];
      out.push_back({item.image, obj, false, question(obj)});
    }
  }
  return out;
}

// ------------------------------------------------------------------ backend

ImageHandle TestbedBackend::add_scene(const SceneImage& scene) {
  std::lock_guard lock(mu_);
  scenes_[scene.id] = scene;
  return {scene.id, ImageOrigin::original, std::nullopt};
}

std::optional<SceneImage> TestbedBackend::scene(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = scenes_.find(id);
  if (it == scenes_.end()) return std::nullopt;
  return it->second;
}

LogitVector TestbedBackend::logits(const ImageHandle& image, std::span<const TokenId> prompt,
                                   std::span<const TokenId> prefix) {
  const auto s = scene(image.id);
  if (!s) throw Error(ErrorKind::backend, "testbed: unknown image id '" + image.id + "'", "unknown_image");
  return world_.synth_logits(*s, prompt, prefix);
}

std::string TestbedBackend::detokenize(std::span<const TokenId> ids) {
  world_.vocabulary().check_sequence(ids);
  return world_.detokenize(ids);
}

ImageHandle TestbedBackend::register_image(const std::optional<std::string>& bytes_b64,
                                           const std::optional<std::string>& ref) {
  if (bytes_b64) throw Error(ErrorKind::backend, "testbed: pixel uploads are not supported; pass a scene ref", "refused");
  if (!ref) throw Error(ErrorKind::invalid_argument, "testbed: register_image needs a ref", "bad_ref");
  return add_scene(world_.parse_scene_ref(*ref));
}

ImageHandle TestbedBackend::generate_image(const std::string& caption, std::uint64_t seed) {
  const SceneImage img = world_.faithful_t2i(caption, seed);
  add_scene(img);
  return {img.id, ImageOrigin::generated, caption};
}

std::vector<std::string> TestbedBackend::capabilities() const {
  return {kCapLogits, kCapTokenize, kCapGenerateImage};
}

}  // namespace convis::testbed
