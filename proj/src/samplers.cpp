#include "convis/samplers.hpp"

#include <algorithm>
#include <cmath>

namespace convis {

const char* to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::greedy: return "greedy";
    case SamplerKind::nucleus: return "nucleus";
    case SamplerKind::beam: return "beam";
  }
  return "unknown";
}

SamplerKind sampler_kind_from_string(const std::string& name) {
  if (name == "greedy") return SamplerKind::greedy;
  if (name == "nucleus") return SamplerKind::nucleus;
  if (name == "beam") return SamplerKind::beam;
  fail(ErrorKind::invalid_argument, "unknown sampler kind '" + name + "'");
}

void SamplerConfig::validate() const {
  if (max_new_tokens < 1) fail(ErrorKind::invalid_argument, "max_new_tokens must be at least 1");
  if (beam_width < 1) fail(ErrorKind::invalid_argument, "beam_width must be at least 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail(ErrorKind::invalid_argument, "temperature must be positive");
  if (!(top_p > 0.0) || top_p > 1.0) fail(ErrorKind::invalid_argument, "top_p must lie in (0, 1]");
}

SamplerConfig SamplerConfig::greedy(int max_new_tokens) {
  SamplerConfig c;
  c.max_new_tokens = max_new_tokens;
  return c;
}

SamplerConfig SamplerConfig::nucleus(double temperature, double top_p, int max_new_tokens, std::uint64_t seed) {
  SamplerConfig c;
  c.kind = SamplerKind::nucleus;
  c.temperature = temperature;
  c.top_p = top_p;
  c.max_new_tokens = max_new_tokens;
  c.rng_seed = seed;
  return c;
}

SamplerConfig SamplerConfig::beam(int width, int max_new_tokens) {
  SamplerConfig c;
  c.kind = SamplerKind::beam;
  c.beam_width = width;
  c.max_new_tokens = max_new_tokens;
  return c;
}

TokenId greedy_step(const LogitVector& logits) { return argmax(logits); }

TokenId nucleus_step(const LogitVector& logits, double temperature, double top_p, RngStream& rng) {
  const ProbDistribution p = softmax(logits, temperature);
  const std::vector<TokenId> support = top_p_support(p, top_p);
  double mass = 0.0;
  for (TokenId t : support) mass += p[static_cast<std::size_t>(t)];
  const double u = rng.uniform() * mass;
  double cum = 0.0;
  for (TokenId t : support) {
    cum += p[static_cast<std::size_t>(t)];
    if (u < cum) return t;
  }
  return support.back();
}

namespace {

LogitVector query(const StepProvider& provider, const TokenSequence& prompt, const TokenSequence& prefix,
                  std::size_t step) {
  try {
    return provider(prompt, prefix);
  } catch (Error& e) {
    e.add_context("step " + std::to_string(step));
    throw;
  }
}

struct Hypothesis {
  TokenSequence tokens;
  std::vector<StepRecord> steps;
  double score = 0.0;
  bool finished = false;
};

struct Candidate {
  std::size_t beam;
  TokenId token;
  double score;
};

// Higher score first; then shorter; then lexicographically smaller.
bool better_final(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

}  // namespace

DecodeResult beam_decode(const StepProvider& provider, const TokenSequence& prompt, const SamplerConfig& cfg,
                         TokenId eos_id) {
  cfg.validate();
  const auto width = static_cast<std::size_t>(cfg.beam_width);
  std::vector<Hypothesis> alive(1);
  std::vector<Hypothesis> done;

  for (std::size_t step = 0; step < static_cast<std::size_t>(cfg.max_new_tokens) && !alive.empty(); ++step) {
    std::vector<Candidate> candidates;
    std::vector<ProbDistribution> dists;
    dists.reserve(alive.size());
    for (std::size_t b = 0; b < alive.size(); ++b) {
      const LogitVector logits = query(provider, prompt, alive[b].tokens, step);
      const std::vector<double> lp = log_softmax(logits, cfg.temperature);
      dists.push_back(softmax(logits, cfg.temperature));
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (!is_masked(lp[t])) candidates.push_back({b, static_cast<TokenId>(t), alive[b].score + lp[t]});
      }
    }
    const std::size_t keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const Candidate& c = candidates[k];
      Hypothesis h = alive[c.beam];
      h.tokens.push_back(c.token);
      h.steps.push_back({c.token, dists[c.beam]});
      h.score = c.score;
      if (c.token == eos_id) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }

  for (auto& h : alive) done.push_back(std::move(h));
  if (done.empty()) fail(ErrorKind::empty_support, "beam search produced no hypothesis");
  const auto best = std::min_element(done.begin(), done.end(), better_final);

  DecodeResult result;
  result.tokens = std::move(best->tokens);
  result.per_step = std::move(best->steps);
  result.stopped_by = best->finished ? StopReason::eos : StopReason::budget;
  return result;
}

DecodeResult decode(const StepProvider& provider, const TokenSequence& prompt, const SamplerConfig& cfg,
                    TokenId eos_id) {
  cfg.validate();
  if (cfg.kind == SamplerKind::beam) return beam_decode(provider, prompt, cfg, eos_id);

  RngStream rng(cfg.rng_seed);
  DecodeResult result;
  for (std::size_t step = 0; step < static_cast<std::size_t>(cfg.max_new_tokens); ++step) {
    const LogitVector logits = query(provider, prompt, result.tokens, step);
    TokenId token = 0;
    ProbDistribution dist;
    try {
      if (cfg.kind == SamplerKind::greedy) {
        token = greedy_step(logits);
        dist = softmax(logits, 1.0);
      } else {
        token = nucleus_step(logits, cfg.temperature, cfg.top_p, rng);
        dist = softmax(logits, cfg.temperature);
      }
    } catch (Error& e) {
      e.add_context("step " + std::to_string(step));
      throw;
    }
    result.tokens.push_back(token);
    result.per_step.push_back({token, std::move(dist)});
    if (token == eos_id) {
      result.stopped_by = StopReason::eos;
      return result;
    }
  }
  result.stopped_by = StopReason::budget;
  return result;
}

}  // namespace convis
