#include <atomic>
#include <cassert>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "mvpower/simd.hpp"

namespace mvpower::simd {

namespace {

struct Table {
    double (*dot)(const double*, const double*, std::size_t);
    double (*weighted_dot)(const double*, const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    double (*sum)(const double*, std::size_t);
};

constexpr Table kScalar{scalar::dot, scalar::weighted_dot, scalar::axpy, scalar::sum};
#if defined(MVPOWER_HAVE_AVX2)
constexpr Table kAvx2{avx2::dot, avx2::weighted_dot, avx2::axpy, avx2::sum};
#endif
#if defined(MVPOWER_HAVE_NEON)
constexpr Table kNeon{neon::dot, neon::weighted_dot, neon::axpy, neon::sum};
#endif

const Table* table_for(Level level) {
    switch (level) {
#if defined(MVPOWER_HAVE_AVX2)
    case Level::avx2: return &kAvx2;
#endif
#if defined(MVPOWER_HAVE_NEON)
    case Level::neon: return &kNeon;
#endif
    default: return &kScalar;
    }
}

Level initial_level() {
    // MVPOWER_SIMD=scalar pins the reference kernels for a whole process.
    if (const char* env = std::getenv("MVPOWER_SIMD"); env && std::string(env) == "scalar") {
        return Level::scalar;
    }
    return detect_level();
}

std::atomic<Level>& current() {
    static std::atomic<Level> level{initial_level()};
    return level;
}

}  // namespace

std::string_view level_name(Level level) {
    switch (level) {
    case Level::scalar: return "scalar";
    case Level::avx2: return "avx2";
    case Level::neon: return "neon";
    }
    return "unknown";
}

bool level_available(Level level) {
    switch (level) {
    case Level::scalar: return true;
    case Level::avx2:
#if defined(MVPOWER_HAVE_AVX2)
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
        return false;
#endif
    case Level::neon:
#if defined(MVPOWER_HAVE_NEON)
        return true;
#else
        return false;
#endif
    }
    return false;
}

Level detect_level() {
    if (level_available(Level::avx2)) return Level::avx2;
    if (level_available(Level::neon)) return Level::neon;
    return Level::scalar;
}

Level active_level() { return current().load(std::memory_order_relaxed); }

void force_level(Level level) {
    if (!level_available(level)) {
        throw std::invalid_argument("SIMD level unavailable: " + std::string(level_name(level)));
    }
    current().store(level, std::memory_order_relaxed);
}

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    return table_for(active_level())->dot(a.data(), b.data(), a.size());
}

double weighted_dot(std::span<const double> w, std::span<const double> a,
                    std::span<const double> b) {
    assert(w.size() == a.size() && a.size() == b.size());
    return table_for(active_level())->weighted_dot(w.data(), a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    table_for(active_level())->axpy(alpha, x.data(), y.data(), x.size());
}

double sum(std::span<const double> a) {
    return table_for(active_level())->sum(a.data(), a.size());
}

}  // namespace mvpower::simd
