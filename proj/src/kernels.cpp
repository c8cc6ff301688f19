#include "convis/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "convis/core.hpp"

namespace convis::kernels {

namespace {

inline double combine_at(std::span<const double> orig, std::span<const std::span<const double>> gens,
                         double scale_orig, double scale_gen, std::size_t i) {
  const double o = orig[i];
  if (is_masked(o)) return kMasked;
  double sum = 0.0;
  for (const auto& g : gens) {
    if (is_masked(g[i])) return kMasked;
    sum += g[i];
  }
  return scale_orig * o - scale_gen * sum;
}

inline double mean_at(std::span<const std::span<const double>> rows, double inv_n, std::size_t i) {
  double sum = 0.0;
  for (const auto& r : rows) {
    if (is_masked(r[i])) return kMasked;
    sum += r[i];
  }
  return sum * inv_n;
}

void check_shapes(std::span<const double> orig, std::span<const std::span<const double>> gens,
                  std::span<double> out) {
  if (gens.empty()) fail(ErrorKind::invalid_argument, "contrastive combination needs at least one generated-image vector");
  if (out.size() != orig.size()) fail(ErrorKind::invalid_argument, "output length differs from input length");
  for (const auto& g : gens) {
    if (g.size() != orig.size()) fail(ErrorKind::invalid_argument, "vocabulary mismatch between logit vectors");
  }
}

void check_rows(std::span<const std::span<const double>> rows, std::span<double> out) {
  if (rows.empty()) fail(ErrorKind::invalid_argument, "mean of zero rows");
  for (const auto& r : rows) {
    if (r.size() != out.size()) fail(ErrorKind::invalid_argument, "vocabulary mismatch between logit vectors");
  }
}

}  // namespace

namespace serial {

void contrastive_combine(std::span<const double> orig, std::span<const std::span<const double>> gens,
                         double alpha, std::span<double> out) {
  check_shapes(orig, gens, out);
  if (alpha == 0.0) {
    std::copy(orig.begin(), orig.end(), out.begin());
    return;
  }
  const double scale_gen = alpha / static_cast<double>(gens.size());
  for (std::size_t i = 0; i < orig.size(); ++i) out[i] = combine_at(orig, gens, 1.0 + alpha, scale_gen, i);
}

void mean_rows(std::span<const std::span<const double>> rows, std::span<double> out) {
  check_rows(rows, out);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean_at(rows, inv_n, i);
}

bool softmax(std::span<const double> values, double temperature, std::span<double> out) {
  double mx = kMasked;
  for (double v : values) mx = std::max(mx, v);
  if (is_masked(mx)) return false;
  // Block-wise partial sums so the serial and parallel paths add in the same order.
  const std::size_t n = values.size();
  const std::size_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
  double total = 0.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    double partial = 0.0;
    const std::size_t end = std::min(n, (b + 1) * kReduceBlock);
    for (std::size_t i = b * kReduceBlock; i < end; ++i) {
      const double e = is_masked(values[i]) ? 0.0 : std::exp((values[i] - mx) / temperature);
      out[i] = e;
      partial += e;
    }
    total += partial;
  }
  const double inv = 1.0 / total;
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
  return true;
}

}  // namespace serial

namespace parallel {

void contrastive_combine(std::span<const double> orig, std::span<const std::span<const double>> gens,
                         double alpha, std::span<double> out) {
  check_shapes(orig, gens, out);
  if (alpha == 0.0) {
    std::copy(orig.begin(), orig.end(), out.begin());
    return;
  }
  const double scale_orig = 1.0 + alpha;
  const double scale_gen = alpha / static_cast<double>(gens.size());
  const auto n = static_cast<std::ptrdiff_t>(orig.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = combine_at(orig, gens, scale_orig, scale_gen, static_cast<std::size_t>(i));
  }
}

void mean_rows(std::span<const std::span<const double>> rows, std::span<double> out) {
  check_rows(rows, out);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = mean_at(rows, inv_n, static_cast<std::size_t>(i));
  }
}

bool softmax(std::span<const double> values, double temperature, std::span<double> out) {
  const auto n = values.size();
  const auto blocks = static_cast<std::ptrdiff_t>((n + kReduceBlock - 1) / kReduceBlock);
  double mx = kMasked;
#pragma omp parallel for reduction(max : mx) schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    mx = std::max(mx, values[static_cast<std::size_t>(i)]);
  }
  if (is_masked(mx)) return false;

  std::vector<double> partial(static_cast<std::size_t>(blocks), 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * kReduceBlock;
    const std::size_t end = std::min(n, begin + kReduceBlock);
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const double e = is_masked(values[i]) ? 0.0 : std::exp((values[i] - mx) / temperature);
      out[i] = e;
      s += e;
    }
    partial[static_cast<std::size_t>(b)] = s;
  }
  double total = 0.0;
  for (double s : partial) total += s;
  const double inv = 1.0 / total;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) out[static_cast<std::size_t>(i)] *= inv;
  return true;
}

}  // namespace parallel

void contrastive_combine(std::span<const double> orig, std::span<const std::span<const double>> gens,
                         double alpha, std::span<double> out) {
  if (orig.size() >= kParallelMinSize) {
    parallel::contrastive_combine(orig, gens, alpha, out);
  } else {
    serial::contrastive_combine(orig, gens, alpha, out);
  }
}

void mean_rows(std::span<const std::span<const double>> rows, std::span<double> out) {
  if (out.size() >= kParallelMinSize) {
    parallel::mean_rows(rows, out);
  } else {
    serial::mean_rows(rows, out);
  }
}

bool softmax(std::span<const double> values, double temperature, std::span<double> out) {
  if (values.size() >= kParallelMinSize) return parallel::softmax(values, temperature, out);
  return serial::softmax(values, temperature, out);
}

}  // namespace convis::kernels
