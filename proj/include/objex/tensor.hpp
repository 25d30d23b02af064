#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace objex {

// Dense N-d array (order <= 4), row-major. Spatial tensors use
// height x width x channels layout; vectors are 1-d.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(count(shape), 0.0);
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor extent must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    int size() const { return static_cast<int>(data.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](int i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return data[static_cast<std::size_t>(i)]; }

    // 3-d access, shape {h, w, c}.
    double& at(int y, int x, int c) {
        assert(shape.size() == 3);
        return data[(static_cast<std::size_t>(y) * shape[1] + x) * shape[2] + c];
    }
    double at(int y, int x, int c) const {
        assert(shape.size() == 3);
        return data[(static_cast<std::size_t>(y) * shape[1] + x) * shape[2] + c];
    }

    void fill(double v) { data.assign(data.size(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    [[nodiscard]] std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

// Debug-build guard used after layer passes.
inline void assert_finite(const Tensor& t, const char* where) {
#ifndef NDEBUG
    if (!t.all_finite()) throw std::runtime_error(std::string("non-finite values in ") + where);
#else
    (void)t;
    (void)where;
#endif
}

}  // namespace objex
