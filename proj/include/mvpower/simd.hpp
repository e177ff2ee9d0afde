#pragma once
// Data-parallel inner loops used by IRLS and covariance accumulation.
//
// Every kernel has a scalar reference implementation; vector variants
// (AVX2+FMA on x86-64, NEON on aarch64) are selected once per process at
// first use. Reductions use a fixed lane/accumulator order so a given
// level is bit-reproducible regardless of threading.

#include <cstddef>
#include <span>
#include <string_view>

namespace mvpower::simd {

enum class Level { scalar, avx2, neon };

std::string_view level_name(Level level);

/// Best level supported by this CPU and build.
Level detect_level();

/// Level currently used by the dispatched entry points.
Level active_level();

/// Overrides the dispatched level (tests, benchmarking). Throws
/// std::invalid_argument if the level is unavailable on this machine.
void force_level(Level level);

bool level_available(Level level);

// Dispatched entry points. All spans must have equal length.
double dot(std::span<const double> a, std::span<const double> b);
double weighted_dot(std::span<const double> w, std::span<const double> a,
                    std::span<const double> b);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
double sum(std::span<const double> a);

// Per-level implementations, exposed for equivalence testing.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double weighted_dot(const double* w, const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double sum(const double* a, std::size_t n);
}  // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double weighted_dot(const double* w, const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double sum(const double* a, std::size_t n);
}  // namespace avx2

namespace neon {
double dot(const double* a, const double* b, std::size_t n);
double weighted_dot(const double* w, const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double sum(const double* a, std::size_t n);
}  // namespace neon

}  // namespace mvpower::simd
