#pragma once

// Contrastive decoding against self-generated visualizations.
//
// Phase 1 samples n diverse captions of the original image and renders each
// one with a text-to-image model. Phase 2 decodes greedily; at every step the
// original-image logits are contrasted with the mean logits of the rendered
// images,
//
//     combined = (1 + alpha) * f_orig - (alpha / n) * sum_i f_gen_i,
//
// and only tokens that are plausible under the original image (probability
// at least lambda times the top probability) may be chosen. Objects the model
// hallucinated in its own captions show up in the rendered images, get larger
// logits there, and are pushed down in the combined score.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "convis/backend.hpp"
#include "convis/core.hpp"
#include "convis/samplers.hpp"

namespace convis {

enum class TaskKind { captioning, vqa };

const char* to_string(TaskKind task);
TaskKind task_kind_from_string(const std::string& name);

/// Default contrast strength per task: 1.0 for captioning, 0.1 for VQA.
double default_alpha(TaskKind task);

inline constexpr const char* kDefaultCaptionPrompt = "Please describe this image in detail.";
inline constexpr int kDefaultCaptionTokens = 256;

struct ConvisConfig {
  double alpha = 1.0;
  double lambda = 0.1;
  bool plausibility = true;  // disable to contrast over the whole vocabulary
  bool keep_eos = true;      // EOS always survives the plausibility mask
  int n_images = 4;
  std::string caption_prompt = kDefaultCaptionPrompt;
  SamplerConfig caption_sampler = SamplerConfig::nucleus(0.7, 0.9, kDefaultCaptionTokens, 0);
  std::vector<std::uint64_t> caption_seeds = {0, 1, 2, 3};
  int response_max_new_tokens = 64;
  bool parallel_queries = false;  // issue the n+1 per-step queries concurrently

  /// Defaults for a task; caption seeds are seed_base + i.
  static ConvisConfig for_task(TaskKind task, int n_images = 4, std::uint64_t seed_base = 0);
  void set_seed_base(std::uint64_t seed_base);
  void validate() const;
};

struct CaptionRecord {
  TokenSequence caption_tokens;
  std::string caption_text;
  std::uint64_t seed = 0;
  ImageHandle image;
};

struct StepTrace {
  TokenId token = 0;
  std::vector<TokenId> support;  // plausibility support, ascending ids
  LogitVector f_orig;
  std::vector<LogitVector> f_gens;
  LogitVector combined;
  double kl = 0.0;                  // KL(orig || mean of generated)
  std::vector<double> per_image_kl;  // KL(orig || gen_i)
};

struct DecodeTrace {
  std::vector<StepTrace> steps;
};

struct ConvisOutput {
  DecodeResult result;
  DecodeTrace trace;
  std::vector<CaptionRecord> captions;
};

/// Closed form of the averaged contrast. Masked in any input means masked in
/// the output; alpha == 0 returns f_orig unchanged.
LogitVector contrastive_logits(const LogitVector& f_orig, std::span<const LogitVector> f_gens, double alpha);

/// {t : p_t >= lambda * max p} under softmax(f_orig), evaluated in log space
/// so that no underflow can drop a token. EOS is added when keep_eos is set
/// and EOS is not masked. Ascending ids.
std::vector<TokenId> plausibility_mask(const LogitVector& f_orig, double lambda, TokenId eos_id, bool keep_eos = true);

/// One contrastive step: combine, mask to the plausibility support, argmax.
StepTrace convis_step(const LogitVector& f_orig, std::span<const LogitVector> f_gens, const ConvisConfig& cfg,
                      TokenId eos_id);

/// Phase 1: n nucleus-sampled captions of `image`, each rendered by `t2i`
/// with the caption's seed.
std::vector<CaptionRecord> generate_caption_set(LogitSource& mllm, ImageGenerator& t2i, const ImageHandle& image,
                                                const ConvisConfig& cfg);

/// Phase 2 given already generated images.
ConvisOutput convis_decode_with_images(LogitSource& mllm, const ImageHandle& image,
                                       const std::vector<CaptionRecord>& captions, const TokenSequence& prompt,
                                       const ConvisConfig& cfg);

/// Both phases.
ConvisOutput convis_decode(LogitSource& mllm, ImageGenerator& t2i, const ImageHandle& image,
                           const TokenSequence& prompt, const ConvisConfig& cfg);

/// Per-step KL(softmax(f_orig) || softmax(mean_i f_gen_i)).
std::vector<double> kl_trace(const DecodeTrace& trace);

/// Recomputes the diagnostic for one step from its stored vectors.
double step_kl(const LogitVector& f_orig, std::span<const LogitVector> f_gens);

}  // namespace convis
