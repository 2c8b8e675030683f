#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mogen/errors.hpp"

namespace mogen {

// Dense row-major array of 32-bit reals. Values are immutable by convention
// once an op has produced them; reductions accumulate in 64-bit.
class Array {
public:
    Array() = default;

    explicit Array(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(checked_numel(shape_), 0.0f);
    }

    Array(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_numel(shape_) != data_.size()) {
            throw shape_error("data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_string(shape_));
        }
    }

    static Array scalar(float v) { return Array({1}, {v}); }

    static Array zeros_like(const Array& a) { return Array(a.shape()); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](size_t i) { return data_[i]; }
    float operator[](size_t i) const { return data_[i]; }

    // 2-D accessors; rows() is the product of all but the last extent so
    // rank-1 arrays behave as a single row.
    int rows() const {
        if (shape_.empty()) return 0;
        size_t r = 1;
        for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= static_cast<size_t>(shape_[i]);
        return static_cast<int>(r);
    }
    int cols() const { return shape_.empty() ? 0 : shape_.back(); }
    float at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }
    float& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Array& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    static std::string shape_string(const std::vector<int>& s) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << "]";
        return os.str();
    }
    std::string shape_string() const { return shape_string(shape_); }

private:
    static size_t checked_numel(const std::vector<int>& shape) {
        size_t n = 1;
        for (int e : shape) {
            if (e <= 0) throw shape_error("non-positive extent in shape " + shape_string(shape));
            n *= static_cast<size_t>(e);
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

inline void require_same_shape(const Array& a, const Array& b, const char* op) {
    if (!a.same_shape(b)) {
        throw shape_error(std::string(op) + ": operands " + a.shape_string() + " vs " +
                          b.shape_string());
    }
}

// In-place a += b.
inline void add_inplace(Array& a, const Array& b) {
    require_same_shape(a, b, "add_inplace");
    for (size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

inline Array operator+(const Array& a, const Array& b) {
    require_same_shape(a, b, "operator+");
    Array out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Array operator-(const Array& a, const Array& b) {
    require_same_shape(a, b, "operator-");
    Array out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Array scaled(const Array& a, float c) {
    Array out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * c;
    return out;
}

// Sum of squares with 64-bit accumulation.
inline double sum_sq(const Array& a) {
    double acc = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * a[i];
    return acc;
}

inline double sum_abs(const Array& a) {
    double acc = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) acc += std::fabs(static_cast<double>(a[i]));
    return acc;
}

inline double max_abs_diff(const Array& a, const Array& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    return m;
}

}  // namespace mogen
