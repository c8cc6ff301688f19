#pragma once

// Shared generators and reference implementations for the tests and the
// acceptance runner. The references are written from the definitions, not
// from the library code: plain loops, long double where it helps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "convis/core.hpp"
#include "convis/samplers.hpp"

namespace testing_support {

using convis::LogitVector;
using convis::TokenId;
using convis::TokenSequence;

inline std::vector<double> random_values(std::mt19937_64& gen, std::size_t n, double scale = 5.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

inline LogitVector random_logits(std::mt19937_64& gen, std::size_t n, double scale = 5.0, double mask_prob = 0.0) {
  auto v = random_values(gen, n, scale);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const std::size_t keep = pick(gen);
  for (std::size_t i = 0; i < n; ++i) {
    if (i != keep && u(gen) < mask_prob) v[i] = convis::kMasked;
  }
  return LogitVector(v);
}

// Direct summation of exp(l_i - max)/sum.
inline std::vector<long double> ref_softmax(const std::vector<double>& l, double temperature = 1.0) {
  long double mx = -INFINITY;
  for (double x : l) {
    if (!std::isinf(x)) mx = std::max<long double>(mx, x);
  }
  std::vector<long double> p(l.size(), 0.0L);
  long double z = 0.0L;
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (std::isinf(l[i])) continue;
    p[i] = std::exp((static_cast<long double>(l[i]) - mx) / temperature);
    z += p[i];
  }
  for (auto& x : p) x /= z;
  return p;
}

// (1/n) sum_i [(1+a) f - a g_i], summed term by term.
inline std::vector<double> ref_contrastive(const std::vector<double>& f, const std::vector<std::vector<double>>& gens,
                                           double alpha) {
  std::vector<double> out(f.size());
  for (std::size_t t = 0; t < f.size(); ++t) {
    if (std::isinf(f[t])) {
      out[t] = f[t];
      continue;
    }
    long double acc = 0.0L;
    bool masked = false;
    for (const auto& g : gens) {
      if (std::isinf(g[t])) masked = true;
      acc += (1.0L + alpha) * f[t] - static_cast<long double>(alpha) * g[t];
    }
    out[t] = masked && alpha != 0.0 ? convis::kMasked : static_cast<double>(acc / gens.size());
  }
  return out;
}

inline std::size_t ref_argmax(const std::vector<double>& v) {
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isinf(v[i]) && v[i] < 0) continue;
    if (best == v.size() || v[i] > v[best]) best = i;
  }
  return best;
}

// Toy provider: logits are a fixed random function of the prefix.
struct ToyProvider {
  std::uint64_t seed = 0;
  std::size_t vocab = 3;
  double scale = 2.0;
  double mask_prob = 0.0;

  LogitVector operator()(const TokenSequence&, const TokenSequence& prefix) const {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL;
    for (TokenId t : prefix) h = (h ^ static_cast<std::uint64_t>(t + 1)) * 0x100000001B3ULL + 0x2545F4914F6CDD1DULL;
    std::mt19937_64 gen(h);
    return random_logits(gen, vocab, scale, mask_prob);
  }
};

// Per-token log-probabilities under softmax(l / T), long double.
inline std::vector<long double> ref_log_probs(const LogitVector& l, double temperature = 1.0) {
  const auto p = ref_softmax(std::vector<double>(l.values().begin(), l.values().end()), temperature);
  std::vector<long double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] > 0 ? std::log(p[i]) : -INFINITY;
  return out;
}

struct Scored {
  TokenSequence tokens;
  long double score = 0.0L;
};

// Every complete sequence: ends with EOS, or reaches `steps` tokens.
inline void enumerate_sequences(const convis::StepProvider& provider, TokenId eos, int steps, const TokenSequence& prefix,
                                long double score, std::vector<Scored>& out) {
  if (static_cast<int>(prefix.size()) == steps) {
    out.push_back({prefix, score});
    return;
  }
  const LogitVector l = provider({}, prefix);
  const auto lp = ref_log_probs(l);
  for (std::size_t t = 0; t < lp.size(); ++t) {
    if (std::isinf(lp[t])) continue;
    TokenSequence next = prefix;
    next.push_back(static_cast<TokenId>(t));
    if (static_cast<TokenId>(t) == eos) {
      out.push_back({next, score + lp[t]});
    } else {
      enumerate_sequences(provider, eos, steps, next, score + lp[t], out);
    }
  }
}

// Highest total log-probability; ties to the shorter, then smaller sequence.
inline Scored exhaustive_best(const convis::StepProvider& provider, TokenId eos, int steps) {
  std::vector<Scored> all;
  enumerate_sequences(provider, eos, steps, {}, 0.0L, all);
  return *std::min_element(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
    return a.tokens < b.tokens;
  });
}

// Beam search by its textbook definition: at each depth rank every child of
// every live prefix and keep the best `width`; EOS children retire.
inline TokenSequence ref_beam(const convis::StepProvider& provider, TokenId eos, int steps, int width) {
  struct Node {
    TokenSequence tokens;
    double score;
  };
  std::vector<Node> live{{{}, 0.0}}, retired;
  for (int d = 0; d < steps && !live.empty(); ++d) {
    struct Child {
      std::size_t parent;
      TokenId token;
      double score;
    };
    std::vector<Child> kids;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto lp = convis::log_softmax(provider({}, live[b].tokens));
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (!std::isinf(lp[t])) kids.push_back({b, static_cast<TokenId>(t), live[b].score + lp[t]});
      }
    }
    std::stable_sort(kids.begin(), kids.end(), [](const Child& a, const Child& b) { return a.score > b.score; });
    std::vector<Node> next;
    for (std::size_t k = 0; k < kids.size() && k < static_cast<std::size_t>(width); ++k) {
      Node n{live[kids[k].parent].tokens, kids[k].score};
      n.tokens.push_back(kids[k].token);
      (kids[k].token == eos ? retired : next).push_back(std::move(n));
    }
    live = std::move(next);
  }
  for (auto& n : live) retired.push_back(std::move(n));
  return std::min_element(retired.begin(), retired.end(),
                          [](const Node& a, const Node& b) {
                            if (a.score != b.score) return a.score > b.score;
                            if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
                            return a.tokens < b.tokens;
                          })
      ->tokens;
}

// Upper tail critical values of chi-square at alpha = 0.01, by degrees of
// freedom (tabulated).
inline double chi2_critical_01(std::size_t dof) {
  static const double table[] = {0.0,    6.635,  9.210,  11.345, 13.277, 15.086, 16.812, 18.475, 20.090, 21.666,
                                 23.209, 24.725, 26.217, 27.688, 29.141, 30.578, 32.000, 33.409, 34.805, 36.191};
  return dof < std::size(table) ? table[dof] : NAN;
}

}  // namespace testing_support
