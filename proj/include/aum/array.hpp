#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <new>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace aum {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MemLimitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Allocation meter for all Array payloads. The bench module reads the
// high-water mark; an optional limit turns oversized runs into
// MemLimitError (recorded as a DNF row, not a crash).
namespace mem {

inline std::atomic<std::size_t> current{0};
inline std::atomic<std::size_t> high_water{0};
inline std::atomic<std::size_t> limit{0};  // 0 = unlimited

inline void reset_high_water() { high_water.store(current.load()); }

inline void on_alloc(std::size_t bytes) {
    std::size_t cur = current.fetch_add(bytes) + bytes;
    std::size_t lim = limit.load();
    if (lim != 0 && cur > lim) {
        current.fetch_sub(bytes);
        throw MemLimitError("array allocation of " + std::to_string(bytes) +
                            " bytes exceeds limit of " + std::to_string(lim));
    }
    std::size_t hw = high_water.load();
    while (cur > hw && !high_water.compare_exchange_weak(hw, cur)) {
    }
}

inline void on_free(std::size_t bytes) { current.fetch_sub(bytes); }

}  // namespace mem

template <class T>
struct TrackedAlloc {
    using value_type = T;
    TrackedAlloc() = default;
    template <class U>
    TrackedAlloc(const TrackedAlloc<U>&) {}
    T* allocate(std::size_t n) {
        mem::on_alloc(n * sizeof(T));
        return static_cast<T*>(::operator new(n * sizeof(T)));
    }
    void deallocate(T* p, std::size_t n) noexcept {
        mem::on_free(n * sizeof(T));
        ::operator delete(p);
    }
    template <class U>
    bool operator==(const TrackedAlloc<U>&) const {
        return true;
    }
};

inline std::string shape_to_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major array. Rank 0 (empty shape) is a scalar with one element.
template <class T>
struct Array {
    std::vector<std::size_t> shape;
    std::vector<T, TrackedAlloc<T>> data;

    Array() = default;
    explicit Array(std::vector<std::size_t> s, T fill = T(0))
        : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto e : s) n *= e;
        return n;
    }

    static Array zeros(std::vector<std::size_t> s) { return Array(std::move(s)); }
    static Array full(std::vector<std::size_t> s, T v) { return Array(std::move(s), v); }
    static Array scalar(T v) {
        Array a{std::vector<std::size_t>{}};
        a.data[0] = v;
        return a;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t i) const { return shape.at(i); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }
    T& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const T& at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const T& at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Array& o) const { return shape == o.shape; }
    std::string shape_str() const { return shape_to_string(shape); }

    template <class U>
    Array<U> cast() const {
        Array<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <class T>
inline bool all_finite(const Array<T>& a) {
    for (const T& v : a.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <class T>
inline void check_finite(const Array<T>& a, const char* where) {
    if (!all_finite(a))
        throw NumericError(std::string("non-finite value produced by ") + where);
}

// Debug-mode finite assertion; compiled out of release builds.
template <class T>
inline void debug_check_finite(const Array<T>& a, const char* where) {
#ifndef NDEBUG
    check_finite(a, where);
#else
    (void)a;
    (void)where;
#endif
}

template <class T>
inline void fill_uniform(Array<T>& a, std::mt19937& rng, T lo, T hi) {
    std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
    for (T& v : a.data) v = static_cast<T>(d(rng));
}

template <class T>
inline void fill_normal(Array<T>& a, std::mt19937& rng, T mean, T stddev) {
    std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
    for (T& v : a.data) v = static_cast<T>(d(rng));
}

// Worker-pool activity flag; the bench harness refuses to time while any
// pool is alive.
inline std::atomic<int> active_workers{0};

}  // namespace aum
