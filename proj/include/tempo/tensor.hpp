#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tempo/common.hpp"

namespace tempo {

enum class Precision : std::uint8_t { Single, HalfEmulated };

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape);

// ---- IEEE 754 binary16 emulation -------------------------------------------
//
// Half values live in ordinary float slots but are snapped to the binary16
// grid: round to nearest, ties to even. Magnitudes that round past 65504
// become signed infinity; binary16 subnormals (multiples of 2^-24) are kept.

std::uint16_t float_to_half_bits(float value);
float half_bits_to_float(std::uint16_t bits);

/// Rounds a single-precision value to the nearest binary16 value and widens
/// it back. Idempotent on the binary16 grid.
inline float half_round(float value) {
    return half_bits_to_float(float_to_half_bits(value));
}

// ---- Counter-based RNG ------------------------------------------------------
//
// splitmix64 finalizer over (seed, counter). Pure integer arithmetic, so the
// stream is bit-identical across platforms for a given (seed, counter).
struct Rng {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    Rng() = default;
    explicit Rng(std::uint64_t s) : seed(s) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Independent stream derived from a base seed and a stream tag.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        return Rng(mix(seed ^ (0x9e3779b97f4a7c15ull * (stream + 1))));
    }

    std::uint64_t next_u64() {
        return mix(seed + 0x9e3779b97f4a7c15ull * ++counter);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    /// Gaussian-shaped deviate (Irwin-Hall sum of 12 uniforms). Avoids libm
    /// transcendentals so the value stream, too, is platform-identical.
    double gaussian() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform();
        return s - 6.0;
    }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }
};

// ---- Tensor -----------------------------------------------------------------

struct Tensor {
    Shape shape;
    std::vector<float> data;
    Precision precision = Precision::Single;

    Tensor() = default;

    static Tensor zeros(Shape shape, Precision p = Precision::Single);
    static Tensor full(Shape shape, float value, Precision p = Precision::Single);
    /// Builds a tensor from explicit values; snaps them if p is HalfEmulated.
    static Tensor of(Shape shape, std::vector<float> values,
                     Precision p = Precision::Single);

    std::int64_t size() const { return std::int64_t(data.size()); }
    bool empty() const { return data.empty(); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    float& operator[](std::int64_t i) { return data[std::size_t(i)]; }
    float operator[](std::int64_t i) const { return data[std::size_t(i)]; }
};

/// Bit-exact equality of shape, precision and every element (NaN-safe).
bool bits_equal(const Tensor& a, const Tensor& b);

using GradMap = std::map<std::string, Tensor>;

// ---- Kernels ----------------------------------------------------------------
//
// All kernels are pure, single-threaded and deterministic. The `out` precision
// is the caller's election: with HalfEmulated the inputs are snapped to the
// binary16 grid before the op and the result is snapped after; accumulation
// inside matmul always happens in single precision.

Tensor cast_to_half(const Tensor& x);

/// Mean absolute element-wise difference between x and q.
double quantization_error(const Tensor& x, const Tensor& q);

Tensor add(const Tensor& a, const Tensor& b, Precision out = Precision::Single);
Tensor mul(const Tensor& a, const Tensor& b, Precision out = Precision::Single);
Tensor relu(const Tensor& x);
Tensor exp_elem(const Tensor& x);
Tensor log_elem(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b, Precision out = Precision::Single);
Tensor transpose2d(const Tensor& x);
/// x: [rows, n] plus bias [n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias, Precision out = Precision::Single);

}  // namespace tempo
