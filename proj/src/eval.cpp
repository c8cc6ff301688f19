#include "convis/eval.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

#include "convis/error.hpp"

namespace convis::eval {

using nlohmann::json;

namespace {

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  std::string w;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      w.push_back(static_cast<char>(std::tolower(c)));
    } else if (!w.empty()) {
      out.push_back(std::move(w));
      w.clear();
    }
  }
  if (!w.empty()) out.push_back(std::move(w));
  return out;
}

std::string join(const std::vector<std::string>& words, std::size_t begin, std::size_t end) {
  std::string s;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) s += ' ';
    s += words[i];
  }
  return s;
}

std::string normalize(const std::string& surface) {
  const auto w = words_of(surface);
  return join(w, 0, w.size());
}

}  // namespace

ObjectLexicon::ObjectLexicon(std::vector<std::string> categories, std::map<std::string, std::string> synonyms)
    : categories_(std::move(categories)), synonyms_(std::move(synonyms)) {
  std::set<std::string> cats;
  auto add = [&](const std::string& surface, const std::string& category) {
    const std::string key = normalize(surface);
    if (key.empty()) fail(ErrorKind::invalid_argument, "lexicon: empty surface form for '" + category + "'");
    auto [it, inserted] = surface_.emplace(key, category);
    if (!inserted && it->second != category) {
      fail(ErrorKind::invalid_argument, "lexicon: surface '" + surface + "' maps to both '" + it->second + "' and '" +
                                            category + "'");
    }
    max_words_ = std::max(max_words_, static_cast<std::size_t>(std::count(key.begin(), key.end(), ' ') + 1));
  };
  for (const auto& c : categories_) {
    if (!cats.insert(c).second) fail(ErrorKind::invalid_argument, "lexicon: duplicate category '" + c + "'");
    add(c, c);
  }
  for (const auto& [surface, category] : synonyms_) {
    if (!cats.count(category)) {
      fail(ErrorKind::invalid_argument, "lexicon: synonym '" + surface + "' maps to unknown category '" + category + "'");
    }
    add(surface, category);
  }
}

ObjectLexicon ObjectLexicon::from_json(const json& j) {
  try {
    if (!j.is_object()) fail(ErrorKind::invalid_argument, "lexicon: expected an object");
    for (const auto& [k, v] : j.items()) {
      if (k != "categories" && k != "synonyms") fail(ErrorKind::invalid_argument, "lexicon: unknown key '" + k + "'");
    }
    auto cats = j.at("categories").get<std::vector<std::string>>();
    std::map<std::string, std::string> syn;
    if (j.contains("synonyms")) syn = j.at("synonyms").get<std::map<std::string, std::string>>();
    return ObjectLexicon(std::move(cats), std::move(syn));
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("lexicon: ") + e.what());
  }
}

ObjectLexicon ObjectLexicon::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::invalid_argument, "cannot open lexicon " + path);
  try {
    return from_json(json::parse(is));
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, "lexicon " + path + ": " + e.what());
  }
}

json ObjectLexicon::to_json() const { return {{"categories", categories_}, {"synonyms", synonyms_}}; }

std::optional<std::string> ObjectLexicon::canonical(const std::string& surface) const {
  auto it = surface_.find(normalize(surface));
  if (it == surface_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> extract_objects(const std::string& caption, const ObjectLexicon& lexicon) {
  const auto words = words_of(caption);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < words.size()) {
    std::size_t matched = 0;
    for (std::size_t len = std::min(lexicon.max_words(), words.size() - i); len >= 1; --len) {
      if (auto cat = lexicon.canonical(join(words, i, i + len))) {
        out.push_back(*cat);
        matched = len;
        break;
      }
    }
    i += matched ? matched : 1;
  }
  return out;
}

std::map<std::string, int> extract_object_counts(const std::string& caption, const ObjectLexicon& lexicon) {
  std::map<std::string, int> counts;
  for (auto& o : extract_objects(caption, lexicon)) ++counts[o];
  return counts;
}

ChairResult chair_scores(const std::vector<CaptionSample>& samples, const ObjectLexicon& lexicon) {
  std::vector<std::string> missing;
  for (const auto& s : samples) {
    if (!s.ground_truth) missing.push_back(s.image_ref);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    fail(ErrorKind::metric, "missing ground truth for " + std::to_string(missing.size()) + " caption(s): " + list);
  }
  ChairResult r;
  r.captions = samples.size();
  for (const auto& s : samples) {
    std::set<std::string> truth;
    for (const auto& g : *s.ground_truth) truth.insert(lexicon.canonical(g).value_or(g));
    CaptionDetail d;
    d.image_ref = s.image_ref;
    d.mentioned = extract_objects(s.caption, lexicon);
    for (const auto& m : d.mentioned) {
      if (!truth.count(m)) d.hallucinated.push_back(m);
    }
    r.mentions += d.mentioned.size();
    r.hallucinated_mentions += d.hallucinated.size();
    if (!d.hallucinated.empty()) ++r.hallucinated_captions;
    r.details.push_back(std::move(d));
  }
  r.chair_s = r.captions ? static_cast<double>(r.hallucinated_captions) / static_cast<double>(r.captions) : 0.0;
  r.chair_i = r.mentions ? static_cast<double>(r.hallucinated_mentions) / static_cast<double>(r.mentions) : 0.0;
  return r;
}

const char* to_string(YesNo a) {
  switch (a) {
    case YesNo::yes: return "yes";
    case YesNo::no: return "no";
    case YesNo::unparseable: return "unparseable";
  }
  return "unparseable";
}

YesNo parse_yes_no(const std::string& answer) {
  const auto words = words_of(answer);
  if (words.empty()) return YesNo::unparseable;
  if (words.front() == "yes") return YesNo::yes;
  if (words.front() == "no") return YesNo::no;
  return YesNo::unparseable;
}

PopeScore pope_score(const std::vector<PopeItem>& items) {
  if (items.empty()) fail(ErrorKind::metric, "pope_score: no items");
  PopeScore s;
  for (const auto& it : items) {
    const bool predicted_yes = it.parsed == YesNo::unparseable ? !it.label_yes : it.parsed == YesNo::yes;
    if (it.label_yes) {
      predicted_yes ? ++s.tp : ++s.fn;
    } else {
      predicted_yes ? ++s.fp : ++s.tn;
    }
  }
  const auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  s.accuracy = ratio(s.tp + s.tn, items.size());
  s.precision = ratio(s.tp, s.tp + s.fp);
  s.recall = ratio(s.tp, s.tp + s.fn);
  s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

const std::vector<std::string>& benchmark_names() {
  static const std::vector<std::string> names = {"CHAIR", "HallusionBench", "POPE", "MME", "LLaVA-Bench"};
  return names;
}

int benchmark_budget(const std::string& benchmark) {
  static const std::map<std::string, int> budgets = {
      {"chair", 64}, {"hallusionbench", 64}, {"pope", 16}, {"mme", 128}, {"llava-bench", 512}};
  std::string key = benchmark;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  auto it = budgets.find(key);
  if (it == budgets.end()) fail(ErrorKind::config, "unknown benchmark '" + benchmark + "'");
  return it->second;
}

namespace {

template <class F>
void for_each_jsonl(const std::string& path, F&& f) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::metric, "cannot open corpus " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line));
    } catch (const std::exception& e) {
      fail(ErrorKind::metric, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<CaptionSample> load_caption_corpus(const std::string& path) {
  std::vector<CaptionSample> out;
  for_each_jsonl(path, [&](const json& j) {
    CaptionSample s;
    s.image_ref = j.at("image_ref").get<std::string>();
    s.caption = j.value("caption", std::string{});
    if (j.contains("ground_truth") && !j.at("ground_truth").is_null()) {
      s.ground_truth = j.at("ground_truth").get<std::vector<std::string>>();
    }
    out.push_back(std::move(s));
  });
  return out;
}

std::vector<PopeItem> load_pope_corpus(const std::string& path) {
  std::vector<PopeItem> out;
  for_each_jsonl(path, [&](const json& j) {
    PopeItem it;
    it.image_ref = j.at("image_ref").get<std::string>();
    it.object = j.at("object").get<std::string>();
    const std::string label = j.at("ground_truth").get<std::string>();
    if (label != "yes" && label != "no") throw std::invalid_argument("ground_truth must be yes or no");
    it.label_yes = label == "yes";
    it.answer = j.value("answer", std::string{});
    it.parsed = parse_yes_no(it.answer);
    out.push_back(std::move(it));
  });
  return out;
}

}  // namespace convis::eval
