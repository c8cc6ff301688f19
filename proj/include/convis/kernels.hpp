#pragma once

// Per-token vocabulary kernels. Each kernel has a plain serial reference in
// `kernels::serial` and an OpenMP version in `kernels::parallel`; the
// unqualified entry points dispatch on vector length. Reductions in the
// parallel versions use a fixed block partition that does not depend on the
// thread count, so results are reproducible for a given length.

#include <cstddef>
#include <span>

namespace convis::kernels {

/// Vectors shorter than this stay on the serial path.
inline constexpr std::size_t kParallelMinSize = std::size_t{1} << 14;
/// Block length used for deterministic partial sums.
inline constexpr std::size_t kReduceBlock = 4096;

namespace serial {

/// out = (1 + alpha) * orig - (alpha / n) * sum_i gens[i]. A token masked in
/// any input is masked in the output. alpha == 0 copies `orig` unchanged.
void contrastive_combine(std::span<const double> orig, std::span<const std::span<const double>> gens,
                         double alpha, std::span<double> out);

/// Entrywise mean of `rows`, masked where any row is masked.
void mean_rows(std::span<const std::span<const double>> rows, std::span<double> out);

/// Writes softmax(values / temperature) into out. Returns false when every
/// entry is masked (out is left unspecified).
bool softmax(std::span<const double> values, double temperature, std::span<double> out);

}  // namespace serial

namespace parallel {

void contrastive_combine(std::span<const double> orig, std::span<const std::span<const double>> gens,
                         double alpha, std::span<double> out);
void mean_rows(std::span<const std::span<const double>> rows, std::span<double> out);
bool softmax(std::span<const double> values, double temperature, std::span<double> out);

}  // namespace parallel

void contrastive_combine(std::span<const double> orig, std::span<const std::span<const double>> gens,
                         double alpha, std::span<double> out);
void mean_rows(std::span<const std::span<const double>> rows, std::span<double> out);
bool softmax(std::span<const double> values, double temperature, std::span<double> out);

}  // namespace convis::kernels
