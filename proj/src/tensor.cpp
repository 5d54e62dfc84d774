#include "tempo/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace tempo {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// ---- binary16 conversion ----------------------------------------------------

std::uint16_t float_to_half_bits(float value) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(value);
    const auto sign = std::uint16_t((u >> 16) & 0x8000u);
    const std::uint32_t abs = u & 0x7fffffffu;

    if (abs >= 0x7f800000u) {  // inf or NaN
        if (abs > 0x7f800000u) {
            // Quiet NaN; keep the top mantissa bits as payload.
            return std::uint16_t(sign | 0x7e00u | ((abs & 0x007fffffu) >> 13));
        }
        return std::uint16_t(sign | 0x7c00u);
    }
    // 0x477ff000 is 65520.0f: the midpoint between 65504 (max finite half)
    // and 2^16; ties-to-even sends it, and everything above, to infinity.
    if (abs >= 0x477ff000u) return std::uint16_t(sign | 0x7c00u);

    const std::uint32_t exp = abs >> 23;
    const std::uint32_t mant = abs & 0x007fffffu;

    if (exp >= 0x71) {  // normal half range (value >= 2^-14)
        std::uint16_t h = std::uint16_t(sign | ((exp - 0x70) << 10) | (mant >> 13));
        const std::uint32_t rem = mant & 0x1fffu;
        if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // carry rolls into exponent correctly
        return h;
    }
    if (exp < 0x5f) return sign;  // below 2^-32: rounds to signed zero

    // Subnormal half: quantum is 2^-24. Round the 24-bit significand.
    const std::uint32_t mant24 = mant | 0x00800000u;
    const std::uint32_t shift = 0x7e - exp;  // in [15, 31]
    std::uint32_t q = mant24 >> shift;
    const std::uint32_t rem = mant24 & ((1u << shift) - 1u);
    const std::uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (q & 1u))) ++q;
    return std::uint16_t(sign | q);
}

float half_bits_to_float(std::uint16_t bits) {
    const std::uint32_t sign = std::uint32_t(bits & 0x8000u) << 16;
    const std::uint32_t exp = (bits >> 10) & 0x1fu;
    const std::uint32_t mant = bits & 0x3ffu;

    if (exp == 0) {
        if (mant == 0) return std::bit_cast<float>(sign);
        // Subnormal: mant * 2^-24, exact in float.
        const float v = std::ldexp(float(mant), -24);
        return (bits & 0x8000u) ? -v : v;
    }
    if (exp == 31) {
        return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
    }
    return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, Precision p) {
    Tensor t;
    const std::int64_t n = numel(shape);
    require(n >= 0, "tensor: negative dimension in shape " + shape_str(shape));
    t.shape = std::move(shape);
    t.data.assign(std::size_t(n), 0.0f);
    t.precision = p;
    return t;
}

Tensor Tensor::full(Shape shape, float value, Precision p) {
    Tensor t = zeros(std::move(shape), p);
    const float v = (p == Precision::HalfEmulated) ? half_round(value) : value;
    for (auto& x : t.data) x = v;
    return t;
}

Tensor Tensor::of(Shape shape, std::vector<float> values, Precision p) {
    require(numel(shape) == std::int64_t(values.size()),
            "tensor: shape " + shape_str(shape) + " does not match " +
                std::to_string(values.size()) + " values");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    t.precision = p;
    if (p == Precision::HalfEmulated) {
        for (auto& x : t.data) x = half_round(x);
    }
    return t;
}

bool Tensor::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape || a.precision != b.precision) return false;
    if (a.data.size() != b.data.size()) return false;
    return a.data.empty() ||
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

// ---- Kernels ----------------------------------------------------------------

Tensor cast_to_half(const Tensor& x) {
    Tensor out = x;
    out.precision = Precision::HalfEmulated;
    for (auto& v : out.data) v = half_round(v);
    return out;
}

double quantization_error(const Tensor& x, const Tensor& q) {
    require(x.same_shape(q), "quantization_error: shape mismatch " +
                                 shape_str(x.shape) + " vs " + shape_str(q.shape));
    if (x.data.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        sum += std::fabs(double(x.data[i]) - double(q.data[i]));
    }
    return sum / double(x.data.size());
}

namespace {

// Returns a pointer to data already on the binary16 grid, snapping into
// `storage` only when needed.
const float* half_view(const Tensor& t, std::vector<float>& storage) {
    if (t.precision == Precision::HalfEmulated) return t.data.data();
    storage.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) storage[i] = half_round(t.data[i]);
    return storage.data();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Precision out) {
    require(a.same_shape(b), "add: shape mismatch " + shape_str(a.shape) + " vs " +
                                 shape_str(b.shape));
    Tensor c = Tensor::zeros(a.shape, out);
    if (out == Precision::HalfEmulated) {
        std::vector<float> sa, sb;
        const float* pa = half_view(a, sa);
        const float* pb = half_view(b, sb);
        for (std::size_t i = 0; i < c.data.size(); ++i)
            c.data[i] = half_round(pa[i] + pb[i]);
    } else {
        for (std::size_t i = 0; i < c.data.size(); ++i)
            c.data[i] = a.data[i] + b.data[i];
    }
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b, Precision out) {
    require(a.same_shape(b), "mul: shape mismatch " + shape_str(a.shape) + " vs " +
                                 shape_str(b.shape));
    Tensor c = Tensor::zeros(a.shape, out);
    if (out == Precision::HalfEmulated) {
        std::vector<float> sa, sb;
        const float* pa = half_view(a, sa);
        const float* pb = half_view(b, sb);
        for (std::size_t i = 0; i < c.data.size(); ++i)
            c.data[i] = half_round(pa[i] * pb[i]);
    } else {
        for (std::size_t i = 0; i < c.data.size(); ++i)
            c.data[i] = a.data[i] * b.data[i];
    }
    return c;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;  // the binary16 grid is closed under max(0, .)
    for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor exp_elem(const Tensor& x) {
    Tensor y = x;
    y.precision = Precision::Single;
    for (auto& v : y.data) v = std::exp(v);
    return y;
}

Tensor log_elem(const Tensor& x) {
    Tensor y = x;
    y.precision = Precision::Single;
    for (auto& v : y.data) v = std::log(v);
    return y;
}

Tensor matmul(const Tensor& a, const Tensor& b, Precision out) {
    require(a.shape.size() == 2 && b.shape.size() == 2,
            "matmul: expects 2-D tensors, got " + shape_str(a.shape) + " and " +
                shape_str(b.shape));
    require(a.shape[1] == b.shape[0], "matmul: inner dimensions differ, " +
                                          shape_str(a.shape) + " vs " +
                                          shape_str(b.shape));
    const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor c = Tensor::zeros({m, n}, out);

    std::vector<float> sa, sb;
    const bool half = (out == Precision::HalfEmulated);
    const float* pa = half ? half_view(a, sa) : a.data.data();
    const float* pb = half ? half_view(b, sb) : b.data.data();

    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            float acc = 0.0f;  // accumulation stays single precision
            const float* arow = pa + i * k;
            for (std::int64_t l = 0; l < k; ++l) acc += arow[l] * pb[l * n + j];
            c.data[std::size_t(i * n + j)] = half ? half_round(acc) : acc;
        }
    }
    return c;
}

Tensor transpose2d(const Tensor& x) {
    require(x.shape.size() == 2, "transpose2d: expects 2-D tensor, got " +
                                     shape_str(x.shape));
    const std::int64_t r = x.shape[0], c = x.shape[1];
    Tensor y = Tensor::zeros({c, r}, x.precision);
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            y.data[std::size_t(j * r + i)] = x.data[std::size_t(i * c + j)];
    return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, Precision out) {
    require(!x.shape.empty() && bias.shape.size() == 1 &&
                x.shape.back() == bias.shape[0],
            "add_bias: bias " + shape_str(bias.shape) + " does not match " +
                shape_str(x.shape));
    const std::int64_t n = bias.shape[0];
    const std::int64_t rows = x.size() / n;
    Tensor y = Tensor::zeros(x.shape, out);

    std::vector<float> sx, sb;
    const bool half = (out == Precision::HalfEmulated);
    const float* px = half ? half_view(x, sx) : x.data.data();
    const float* pb = half ? half_view(bias, sb) : bias.data.data();

    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < n; ++j) {
            const float v = px[r * n + j] + pb[j];
            y.data[std::size_t(r * n + j)] = half ? half_round(v) : v;
        }
    }
    return y;
}

}  // namespace tempo
