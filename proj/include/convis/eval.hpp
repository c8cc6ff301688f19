#pragma once

// Object-hallucination metrics.
//
// CHAIR_S = (#captions with at least one hallucinated mention) / #captions
// CHAIR_I = (#hallucinated mentions) / (#mentions), 0/0 := 0
//
// Mentions are found by a case-insensitive, longest-match scan over word
// boundaries. Each matched span is one mention of its canonical category, so
// "a dog chasing a dog" mentions dog twice. There is no stemming: plural
// forms count only if the lexicon lists them as synonyms.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace convis::eval {

class ObjectLexicon {
 public:
  ObjectLexicon() = default;
  /// Every synonym must map to a listed category; categories map to
  /// themselves implicitly.
  ObjectLexicon(std::vector<std::string> categories, std::map<std::string, std::string> synonyms);

  static ObjectLexicon from_json(const nlohmann::json& j);
  static ObjectLexicon load(const std::string& path);
  nlohmann::json to_json() const;

  const std::vector<std::string>& categories() const { return categories_; }
  std::optional<std::string> canonical(const std::string& surface) const;
  std::size_t max_words() const { return max_words_; }

 private:
  std::vector<std::string> categories_;
  std::map<std::string, std::string> synonyms_;
  std::map<std::string, std::string> surface_;  // normalized surface form -> category
  std::size_t max_words_ = 1;
};

/// Canonical categories mentioned by `caption`, one entry per mention, in
/// order of appearance.
std::vector<std::string> extract_objects(const std::string& caption, const ObjectLexicon& lexicon);

/// Multiset view of extract_objects.
std::map<std::string, int> extract_object_counts(const std::string& caption, const ObjectLexicon& lexicon);

struct CaptionSample {
  std::string image_ref;
  std::string caption;
  std::optional<std::vector<std::string>> ground_truth;
};

struct CaptionDetail {
  std::string image_ref;
  std::vector<std::string> mentioned;
  std::vector<std::string> hallucinated;
};

struct ChairResult {
  double chair_s = 0.0;
  double chair_i = 0.0;
  std::size_t captions = 0;
  std::size_t hallucinated_captions = 0;
  std::size_t mentions = 0;
  std::size_t hallucinated_mentions = 0;
  std::vector<CaptionDetail> details;
};

/// Ground-truth names are canonicalized through the lexicon when possible.
/// A sample without ground truth raises a metric error naming it.
ChairResult chair_scores(const std::vector<CaptionSample>& samples, const ObjectLexicon& lexicon);

enum class YesNo { yes, no, unparseable };
const char* to_string(YesNo a);

/// Case-insensitive; the first word after leading punctuation/whitespace
/// decides.
YesNo parse_yes_no(const std::string& answer);

struct PopeItem {
  std::string image_ref;
  std::string object;
  bool label_yes = false;
  std::string answer;
  YesNo parsed = YesNo::unparseable;
};

struct PopeScore {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// "yes" is the positive class. An unparseable answer counts as wrong: a
/// false negative for a yes label, a false positive for a no label.
/// precision/recall/f1 with a zero denominator are 0.
PopeScore pope_score(const std::vector<PopeItem>& items);

/// Maximum new tokens per benchmark: CHAIR 64, HallusionBench 64, POPE 16,
/// MME 128, LLaVA-Bench 512. Names match case-insensitively.
int benchmark_budget(const std::string& benchmark);
const std::vector<std::string>& benchmark_names();

/// JSON-lines corpora: {image_ref, caption|answer, ground_truth, object?}.
std::vector<CaptionSample> load_caption_corpus(const std::string& path);
std::vector<PopeItem> load_pope_corpus(const std::string& path);

}  // namespace convis::eval
