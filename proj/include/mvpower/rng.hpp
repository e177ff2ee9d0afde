#pragma once
// Counter-derived random streams. A stream is identified by
// (master seed, phase tag, index...) so each simulated dataset draws the
// same numbers no matter which worker runs it or in what order.

#include <cstdint>
#include <random>

namespace mvpower {

enum class Phase : std::uint64_t {
    null_sim = 1,
    alt_sim = 2,
    nested_null = 3,
    copula_refit = 4,
    residuals = 5,
    curve_point = 6,
    user = 7,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Hashes (master, phase, index) into a seed for an independent stream.
std::uint64_t derive_seed(std::uint64_t master, Phase phase, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

class Stream {
public:
    explicit Stream(std::uint64_t seed) : engine_(seed) {}
    Stream(std::uint64_t master, Phase phase, std::uint64_t index)
        : engine_(derive_seed(master, phase, index)) {}

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    double uniform() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal by inversion, so the draw sequence is portable.
    double normal();

    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace mvpower
