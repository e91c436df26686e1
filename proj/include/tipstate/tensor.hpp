// Dense 4-D tensor in (batch, channels, height, width) row-major layout.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "tipstate/common.hpp"

namespace tipstate {

template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    T& at(int in, int ic, int iy, int ix) {
        return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    T at(int in, int ic, int iy, int ix) const {
        return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }

    T* plane(int in, int ic) {
        return v.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
    }
    const T* plane(int in, int ic) const {
        return v.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
    }

    // Per-sample flat view, for dense heads.
    T* sample(int in) { return v.data() + static_cast<std::size_t>(in) * c * h * w; }
    const T* sample(int in) const { return v.data() + static_cast<std::size_t>(in) * c * h * w; }
    int features() const { return c * h * w; }

    bool all_finite() const {
        for (const T& x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

}  // namespace tipstate
