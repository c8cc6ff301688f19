#pragma once

// Baseline decoders (greedy, nucleus, beam) and the generic autoregressive
// loop. A decoder only sees a StepProvider: "given the prompt and the tokens
// generated so far, return next-token logits".

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "convis/core.hpp"
#include "convis/rng.hpp"

namespace convis {

enum class SamplerKind { greedy, nucleus, beam };

const char* to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(const std::string& name);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::greedy;
  double temperature = 1.0;
  double top_p = 1.0;
  int beam_width = 1;
  int max_new_tokens = 64;
  std::uint64_t rng_seed = 0;

  /// Throws invalid_argument on a non-positive budget/width/temperature or
  /// top_p outside (0, 1].
  void validate() const;

  static SamplerConfig greedy(int max_new_tokens);
  static SamplerConfig nucleus(double temperature, double top_p, int max_new_tokens, std::uint64_t seed);
  static SamplerConfig beam(int width, int max_new_tokens);
};

enum class StopReason { eos, budget };

struct StepRecord {
  TokenId token = 0;
  ProbDistribution distribution;  // pre-choice distribution at this step
};

struct DecodeResult {
  TokenSequence tokens;
  std::vector<StepRecord> per_step;
  StopReason stopped_by = StopReason::budget;
};

using StepProvider = std::function<LogitVector(const TokenSequence& prompt, const TokenSequence& prefix)>;

TokenId greedy_step(const LogitVector& logits);

/// Samples from softmax(logits / temperature) restricted to the top-p
/// support and renormalized.
TokenId nucleus_step(const LogitVector& logits, double temperature, double top_p, RngStream& rng);

/// Beam search over summed log-probabilities, no length normalization.
/// Hypotheses ending in EOS are frozen; the best of the frozen and the
/// budget-terminated hypotheses is returned.
DecodeResult beam_decode(const StepProvider& provider, const TokenSequence& prompt, const SamplerConfig& cfg,
                         TokenId eos_id);

/// Autoregressive loop; dispatches to beam_decode for beam configs.
/// Provider errors are rethrown with the step index attached.
DecodeResult decode(const StepProvider& provider, const TokenSequence& prompt, const SamplerConfig& cfg,
                    TokenId eos_id);

}  // namespace convis
