#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lwplg {

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() {
    return Dtype::f32;
}
template <>
constexpr Dtype dtype_of<double>() {
    return Dtype::f64;
}

// Dense rank-4 shape, (batch, channels, height, width).
struct Shape4 {
    int64_t n = 0;
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;

    int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;

    int64_t dim(int axis) const {
        switch (axis) {
            case 0: return n;
            case 1: return c;
            case 2: return h;
            case 3: return w;
        }
        fail("Shape4: axis out of range");
    }
    void set_dim(int axis, int64_t v) {
        switch (axis) {
            case 0: n = v; return;
            case 1: c = v; return;
            case 2: h = v; return;
            case 3: w = v; return;
        }
        fail("Shape4: axis out of range");
    }

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

// Shared-buffer dense tensor. Copies are shallow handles onto the same data
// and gradient storage; kernels treat inputs as immutable. The gradient
// buffer exists exactly when the tensor participates in autodiff.
template <typename T>
struct Tensor4 {
    Shape4 shape{};
    std::shared_ptr<std::vector<T>> buf;
    std::shared_ptr<std::vector<T>> gbuf;

    Tensor4() = default;

    static Tensor4 zeros(Shape4 s) {
        Tensor4 t;
        t.shape = s;
        t.buf = std::make_shared<std::vector<T>>(static_cast<size_t>(s.numel()), T(0));
        return t;
    }

    static Tensor4 full(Shape4 s, T v) {
        Tensor4 t = zeros(s);
        for (auto& x : *t.buf) x = v;
        return t;
    }

    static Tensor4 from(Shape4 s, std::vector<T> values) {
        require(static_cast<int64_t>(values.size()) == s.numel(),
                "Tensor4::from: value count " + std::to_string(values.size()) +
                    " does not match shape " + s.str());
        Tensor4 t;
        t.shape = s;
        t.buf = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }

    // Canonical layout for per-channel vectors: (len, 1, 1, 1).
    static Tensor4 vec(std::vector<T> values) {
        int64_t len = static_cast<int64_t>(values.size());
        return from({len, 1, 1, 1}, std::move(values));
    }

    int64_t numel() const { return shape.numel(); }
    bool defined() const { return buf != nullptr; }

    bool requires_grad() const { return gbuf != nullptr; }
    void set_requires_grad(bool on) {
        if (on) {
            if (!gbuf) gbuf = std::make_shared<std::vector<T>>(static_cast<size_t>(numel()), T(0));
        } else {
            gbuf.reset();
        }
    }

    // Handle semantics: copies share storage, so the buffers stay writable
    // through const handles (backward passes accumulate through captured
    // copies of their operands).
    T* data() const { return buf->data(); }
    T* grad() const { return gbuf ? gbuf->data() : nullptr; }

    void zero_grad() const {
        if (gbuf)
            for (auto& g : *gbuf) g = T(0);
    }

    int64_t index(int64_t i0, int64_t i1, int64_t i2, int64_t i3) const {
        return ((i0 * shape.c + i1) * shape.h + i2) * shape.w + i3;
    }
    T& at(int64_t i0, int64_t i1, int64_t i2, int64_t i3) { return (*buf)[index(i0, i1, i2, i3)]; }
    const T& at(int64_t i0, int64_t i1, int64_t i2, int64_t i3) const {
        return (*buf)[index(i0, i1, i2, i3)];
    }

    // Deep copy of the values; the copy starts without gradient state.
    Tensor4 clone() const {
        Tensor4 t;
        t.shape = shape;
        t.buf = std::make_shared<std::vector<T>>(*buf);
        return t;
    }
};

template <typename T>
bool same_values(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (!(a.shape == b.shape)) return false;
    return *a.buf == *b.buf;
}

// Deterministic random source. All distributions are hand-rolled on top of
// mt19937_64 so a seed produces the same stream on every standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Normal(0, stddev) clipped by resampling outside two standard deviations.
    double trunc_normal(double stddev) {
        double z = normal();
        while (std::abs(z) > 2.0) z = normal();
        return z * stddev;
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
void fill_trunc_normal(Tensor4<T>& t, Rng& rng, double stddev) {
    for (auto& v : *t.buf) v = static_cast<T>(rng.trunc_normal(stddev));
}

template <typename T>
void fill_uniform(Tensor4<T>& t, Rng& rng, double lo, double hi) {
    for (auto& v : *t.buf) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace lwplg
