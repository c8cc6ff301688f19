#include "convis/core.hpp"

#include <algorithm>
#include <numeric>

#include "convis/kernels.hpp"

namespace convis {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::empty_support: return "empty_support";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::backend: return "backend";
    case ErrorKind::transport: return "transport";
    case ErrorKind::config: return "config";
    case ErrorKind::metric: return "metric";
  }
  return "unknown";
}

const std::string& Vocabulary::text(TokenId id) const {
  if (!contains(id)) fail(ErrorKind::invalid_argument, "token id " + std::to_string(id) + " outside vocabulary");
  return token_text[static_cast<std::size_t>(id)];
}

void Vocabulary::validate() const {
  if (size == 0) fail(ErrorKind::invalid_argument, "vocabulary is empty");
  if (!contains(eos_id)) fail(ErrorKind::invalid_argument, "eos_id outside vocabulary");
  if (bos_id && !contains(*bos_id)) fail(ErrorKind::invalid_argument, "bos_id outside vocabulary");
  if (token_text.size() != size) fail(ErrorKind::invalid_argument, "token_text does not cover the vocabulary");
}

void Vocabulary::check_sequence(std::span<const TokenId> ids) const {
  for (TokenId id : ids) {
    if (!contains(id)) fail(ErrorKind::invalid_argument, "token id " + std::to_string(id) + " outside vocabulary");
  }
}

LogitVector::LogitVector(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      fail(ErrorKind::invalid_argument, "logit vector holds NaN or +inf");
    }
  }
}

std::size_t LogitVector::unmasked_count() const {
  return static_cast<std::size_t>(
      std::count_if(values_.begin(), values_.end(), [](double v) { return !is_masked(v); }));
}

LogitVector LogitVector::restricted_to(std::span<const TokenId> keep) const {
  std::vector<double> out(values_.size(), kMasked);
  for (TokenId t : keep) {
    const auto i = static_cast<std::size_t>(t);
    if (i >= out.size()) fail(ErrorKind::invalid_argument, "restriction index outside vocabulary");
    out[i] = values_[i];
  }
  return LogitVector(std::move(out));
}

ProbDistribution::ProbDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || std::isinf(p)) fail(ErrorKind::invalid_argument, "probability entry is negative or not finite");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbSumTolerance) {
    fail(ErrorKind::invalid_argument, "probabilities sum to " + std::to_string(sum) + ", not 1");
  }
}

ProbDistribution softmax(const LogitVector& logits, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::invalid_argument, "softmax temperature must be positive");
  std::vector<double> out(logits.size());
  if (!kernels::softmax(logits.values(), temperature, out)) {
    fail(ErrorKind::empty_support, "empty support: every logit is masked");
  }
  return ProbDistribution(std::move(out));
}

std::vector<double> log_softmax(const LogitVector& logits, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::invalid_argument, "softmax temperature must be positive");
  const auto v = logits.values();
  double mx = kMasked;
  for (double x : v) mx = std::max(mx, x);
  if (is_masked(mx)) fail(ErrorKind::empty_support, "empty support: every logit is masked");
  double sum = 0.0;
  for (double x : v) {
    if (!is_masked(x)) sum += std::exp((x - mx) / temperature);
  }
  const double log_z = std::log(sum);
  std::vector<double> out(v.size(), kMasked);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!is_masked(v[i])) out[i] = (v[i] - mx) / temperature - log_z;
  }
  return out;
}

double kl_divergence(const ProbDistribution& p, const ProbDistribution& q) {
  if (p.size() != q.size()) fail(ErrorKind::invalid_argument, "kl_divergence: distributions differ in length");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  // Rounding can leave a tiny negative value for p == q.
  return std::max(kl, 0.0);
}

std::vector<TokenId> top_p_support(const ProbDistribution& p, double top_p) {
  if (!(top_p > 0.0) || top_p > 1.0) fail(ErrorKind::invalid_argument, "top_p must lie in (0, 1]");
  std::vector<TokenId> order;
  order.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) order.push_back(static_cast<TokenId>(i));
  }
  std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    const double pa = p[static_cast<std::size_t>(a)];
    const double pb = p[static_cast<std::size_t>(b)];
    return pa != pb ? pa > pb : a < b;
  });
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    cum += p[static_cast<std::size_t>(order[keep])];
    ++keep;
    if (cum + 1e-12 >= top_p) break;
  }
  order.resize(keep);
  return order;
}

TokenId argmax(const LogitVector& logits) {
  const auto v = logits.values();
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (is_masked(v[i])) continue;
    if (best == v.size() || v[i] > v[best]) best = i;
  }
  if (best == v.size()) fail(ErrorKind::empty_support, "empty support: every logit is masked");
  return static_cast<TokenId>(best);
}

}  // namespace convis
