#pragma once

// Vocabulary-indexed numeric primitives shared by every decoder: logit
// vectors with an explicit "masked" sentinel, probability distributions,
// softmax, KL divergence and nucleus support selection. Everything here is
// 64-bit floating point and free of hidden state.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convis/error.hpp"

namespace convis {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

/// Sentinel for a token that must never be chosen. Only this exact value
/// means "masked"; large finite negatives are ordinary scores.
inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

inline bool is_masked(double v) { return v == kMasked; }

struct Vocabulary {
  std::size_t size = 0;
  TokenId eos_id = 0;
  std::optional<TokenId> bos_id;
  std::vector<std::string> token_text;

  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size; }
  const std::string& text(TokenId id) const;

  /// Throws invalid_argument when eos/bos are out of range or token_text
  /// does not cover every index.
  void validate() const;
  void check_sequence(std::span<const TokenId> ids) const;
};

class LogitVector {
 public:
  LogitVector() = default;
  /// Rejects NaN and +inf. An all-masked vector is representable; the
  /// operations that need a support raise empty_support on it.
  explicit LogitVector(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  bool masked(std::size_t i) const { return is_masked(values_[i]); }
  std::size_t unmasked_count() const;

  /// Returns a copy with every index outside `keep` set to the sentinel.
  LogitVector restricted_to(std::span<const TokenId> keep) const;

  friend bool operator==(const LogitVector&, const LogitVector&) = default;

 private:
  std::vector<double> values_;
};

class ProbDistribution {
 public:
  ProbDistribution() = default;
  /// Requires non-negative entries summing to 1 within 1e-9.
  explicit ProbDistribution(std::vector<double> probs);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }

  friend bool operator==(const ProbDistribution&, const ProbDistribution&) = default;

 private:
  std::vector<double> probs_;
};

inline constexpr double kProbSumTolerance = 1e-9;

/// exp((l - max l) / temperature), normalized. Masked entries get 0.
ProbDistribution softmax(const LogitVector& logits, double temperature = 1.0);

/// log of softmax; masked entries stay masked.
std::vector<double> log_softmax(const LogitVector& logits, double temperature = 1.0);

/// sum p_i ln(p_i / q_i) with 0 ln 0 = 0; +inf when p_i > 0 and q_i = 0.
double kl_divergence(const ProbDistribution& p, const ProbDistribution& q);

/// Smallest set of tokens, taken in descending probability order (ties to
/// the lower index), whose cumulative mass reaches top_p. Returned in that
/// order.
std::vector<TokenId> top_p_support(const ProbDistribution& p, double top_p);

/// Index of the largest unmasked entry; ties go to the lowest index.
TokenId argmax(const LogitVector& logits);

}  // namespace convis
