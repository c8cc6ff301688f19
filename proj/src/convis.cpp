#include "convis/convis.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "convis/kernels.hpp"

namespace convis {

const char* to_string(TaskKind task) { return task == TaskKind::captioning ? "captioning" : "vqa"; }

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "captioning") return TaskKind::captioning;
  if (name == "vqa") return TaskKind::vqa;
  fail(ErrorKind::invalid_argument, "unknown task '" + name + "' (expected captioning or vqa)");
}

double default_alpha(TaskKind task) { return task == TaskKind::captioning ? 1.0 : 0.1; }

ConvisConfig ConvisConfig::for_task(TaskKind task, int n_images, std::uint64_t seed_base) {
  ConvisConfig cfg;
  cfg.alpha = default_alpha(task);
  cfg.n_images = n_images;
  cfg.set_seed_base(seed_base);
  return cfg;
}

void ConvisConfig::set_seed_base(std::uint64_t seed_base) {
  caption_seeds.clear();
  for (int i = 0; i < n_images; ++i) caption_seeds.push_back(seed_base + static_cast<std::uint64_t>(i));
}

void ConvisConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail(ErrorKind::invalid_argument, "alpha must be a non-negative real");
  if (!(lambda > 0.0) || lambda > 1.0) fail(ErrorKind::invalid_argument, "lambda must lie in (0, 1]");
  if (n_images < 1) fail(ErrorKind::invalid_argument, "n_images must be at least 1");
  if (caption_seeds.size() != static_cast<std::size_t>(n_images)) {
    fail(ErrorKind::invalid_argument, "caption_seeds must hold exactly n_images seeds");
  }
  auto sorted = caption_seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    fail(ErrorKind::invalid_argument, "caption_seeds must be distinct");
  }
  if (response_max_new_tokens < 1) fail(ErrorKind::invalid_argument, "response_max_new_tokens must be at least 1");
  caption_sampler.validate();
}

namespace {

std::vector<std::span<const double>> as_rows(std::span<const LogitVector> vs) {
  std::vector<std::span<const double>> rows;
  rows.reserve(vs.size());
  for (const auto& v : vs) rows.push_back(v.values());
  return rows;
}

}  // namespace

LogitVector contrastive_logits(const LogitVector& f_orig, std::span<const LogitVector> f_gens, double alpha) {
  if (f_gens.empty()) fail(ErrorKind::invalid_argument, "contrastive_logits needs at least one generated-image vector");
  const auto rows = as_rows(f_gens);
  std::vector<double> out(f_orig.size());
  kernels::contrastive_combine(f_orig.values(), rows, alpha, out);
  return LogitVector(std::move(out));
}

std::vector<TokenId> plausibility_mask(const LogitVector& f_orig, double lambda, TokenId eos_id, bool keep_eos) {
  if (!(lambda > 0.0) || lambda > 1.0) fail(ErrorKind::invalid_argument, "lambda must lie in (0, 1]");
  const auto v = f_orig.values();
  double mx = kMasked;
  for (double x : v) mx = std::max(mx, x);
  if (is_masked(mx)) fail(ErrorKind::empty_support, "empty support: every logit is masked");
  // p_t / p_max = exp(f_t - f_max) at temperature 1.
  const double log_lambda = std::log(lambda);
  std::vector<TokenId> keep;
  for (std::size_t t = 0; t < v.size(); ++t) {
    if (is_masked(v[t])) continue;
    const bool eos_exempt = keep_eos && static_cast<TokenId>(t) == eos_id;
    if (v[t] - mx >= log_lambda || eos_exempt) keep.push_back(static_cast<TokenId>(t));
  }
  return keep;
}

double step_kl(const LogitVector& f_orig, std::span<const LogitVector> f_gens) {
  const auto rows = as_rows(f_gens);
  std::vector<double> mean(f_orig.size());
  kernels::mean_rows(rows, mean);
  return kl_divergence(softmax(f_orig), softmax(LogitVector(std::move(mean))));
}

StepTrace convis_step(const LogitVector& f_orig, std::span<const LogitVector> f_gens, const ConvisConfig& cfg,
                      TokenId eos_id) {
  StepTrace st;
  st.combined = contrastive_logits(f_orig, f_gens, cfg.alpha);
  if (cfg.plausibility) {
    st.support = plausibility_mask(f_orig, cfg.lambda, eos_id, cfg.keep_eos);
  } else {
    for (std::size_t t = 0; t < f_orig.size(); ++t) {
      if (!f_orig.masked(t)) st.support.push_back(static_cast<TokenId>(t));
    }
  }
  const LogitVector masked = st.combined.restricted_to(st.support);
  if (masked.unmasked_count() == 0) {
    // The original argmax always passes the mask, so this means inconsistent
    // masking between the original and generated-image vectors.
    fail(ErrorKind::empty_support, "empty support after plausibility masking");
  }
  st.token = greedy_step(masked);
  st.f_orig = f_orig;
  st.f_gens.assign(f_gens.begin(), f_gens.end());
  st.kl = step_kl(f_orig, f_gens);
  const ProbDistribution p = softmax(f_orig);
  st.per_image_kl.reserve(f_gens.size());
  for (const auto& g : f_gens) st.per_image_kl.push_back(kl_divergence(p, softmax(g)));
  return st;
}

std::vector<CaptionRecord> generate_caption_set(LogitSource& mllm, ImageGenerator& t2i, const ImageHandle& image,
                                                const ConvisConfig& cfg) {
  cfg.validate();
  const Vocabulary& vocab = mllm.vocabulary();
  const TokenSequence prompt = mllm.tokenize(cfg.caption_prompt);
  std::vector<CaptionRecord> records;
  records.reserve(cfg.caption_seeds.size());
  for (std::size_t i = 0; i < cfg.caption_seeds.size(); ++i) {
    try {
      SamplerConfig sc = cfg.caption_sampler;
      sc.rng_seed = cfg.caption_seeds[i];
      const StepProvider provider = [&](const TokenSequence& pr, const TokenSequence& prefix) {
        return mllm.logits(image, pr, prefix);
      };
      DecodeResult caption = decode(provider, prompt, sc, vocab.eos_id);
      TokenSequence body = caption.tokens;
      if (!body.empty() && body.back() == vocab.eos_id) body.pop_back();
      CaptionRecord rec;
      rec.caption_text = mllm.detokenize(body);
      rec.caption_tokens = std::move(body);
      rec.seed = sc.rng_seed;
      rec.image = t2i.generate_image(rec.caption_text, rec.seed);
      records.push_back(std::move(rec));
    } catch (Error& e) {
      e.add_context("caption " + std::to_string(i));
      throw;
    }
  }
  return records;
}

namespace {

// Queries the original image and every generated image for one step.
// Results are indexed by image order whatever the execution order.
std::vector<LogitVector> query_all(LogitSource& mllm, const std::vector<const ImageHandle*>& images,
                                   const TokenSequence& prompt, const TokenSequence& prefix, bool concurrent) {
  const std::size_t vocab_size = mllm.vocabulary().size;
  std::vector<LogitVector> out(images.size());
  auto one = [&](std::size_t i) {
    out[i] = mllm.logits(*images[i], prompt, prefix);
    if (out[i].size() != vocab_size) {
      fail(ErrorKind::protocol, "logit vector length " + std::to_string(out[i].size()) + " differs from vocabulary size " +
                                    std::to_string(vocab_size),
           "vocab_mismatch");
    }
  };
  if (!concurrent) {
    for (std::size_t i = 0; i < images.size(); ++i) one(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(images.size());
  const auto n = static_cast<std::ptrdiff_t>(images.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      one(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

ConvisOutput convis_decode_with_images(LogitSource& mllm, const ImageHandle& image,
                                       const std::vector<CaptionRecord>& captions, const TokenSequence& prompt,
                                       const ConvisConfig& cfg) {
  cfg.validate();
  if (captions.size() != static_cast<std::size_t>(cfg.n_images)) {
    fail(ErrorKind::invalid_argument, "expected " + std::to_string(cfg.n_images) + " generated images, got " +
                                          std::to_string(captions.size()));
  }
  const TokenId eos = mllm.vocabulary().eos_id;
  std::vector<const ImageHandle*> images{&image};
  for (const auto& c : captions) images.push_back(&c.image);
  const bool concurrent = cfg.parallel_queries && mllm.concurrent_safe();

  ConvisOutput out;
  out.captions = captions;
  DecodeResult& result = out.result;
  for (int step = 0; step < cfg.response_max_new_tokens; ++step) {
    try {
      std::vector<LogitVector> all = query_all(mllm, images, prompt, result.tokens, concurrent);
      std::span<const LogitVector> gens(all.data() + 1, all.size() - 1);
      StepTrace st = convis_step(all[0], gens, cfg, eos);
      result.tokens.push_back(st.token);
      result.per_step.push_back({st.token, softmax(st.f_orig)});
      out.trace.steps.push_back(std::move(st));
    } catch (Error& e) {
      e.add_context("decode step " + std::to_string(step));
      throw;
    }
    if (result.tokens.back() == eos) {
      result.stopped_by = StopReason::eos;
      return out;
    }
  }
  result.stopped_by = StopReason::budget;
  return out;
}

ConvisOutput convis_decode(LogitSource& mllm, ImageGenerator& t2i, const ImageHandle& image,
                           const TokenSequence& prompt, const ConvisConfig& cfg) {
  std::vector<CaptionRecord> captions;
  try {
    captions = generate_caption_set(mllm, t2i, image, cfg);
  } catch (Error& e) {
    e.add_context("caption phase");
    throw;
  }
  try {
    return convis_decode_with_images(mllm, image, captions, prompt, cfg);
  } catch (Error& e) {
    e.add_context("response phase");
    throw;
  }
}

std::vector<double> kl_trace(const DecodeTrace& trace) {
  if (trace.steps.empty()) fail(ErrorKind::invalid_argument, "kl_trace of an empty trace");
  std::vector<double> out;
  out.reserve(trace.steps.size());
  for (const auto& st : trace.steps) out.push_back(step_kl(st.f_orig, st.f_gens));
  return out;
}

}  // namespace convis
