// Layer forward/backward passes.
//
// Convolutions run as im2col + register-blocked GEMM; a naive reference
// implementation lives in the test suite. All backward passes take the
// forward input (the network keeps a per-layer trace in Train mode) and
// overwrite their parameter gradients.
//
// Padding: "same" at stride 1 (output = input), "same-floor" at stride 2
// (output = ceil(input / 2), pad split with the smaller half first).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tipstate/common.hpp"
#include "tipstate/gemm.hpp"
#include "tipstate/tensor.hpp"

namespace tipstate {

enum class Mode { Train, Infer };

namespace detail {

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline int thread_num() {
#ifdef _OPENMP
    return omp_get_thread_num();
#else
    return 0;
#endif
}

}  // namespace detail

template <typename T>
struct Conv2D {
    int in_ch = 0, out_ch = 0, kernel = 3, stride = 1;
    Tensor4<T> w;       // (out_ch, in_ch, kernel, kernel)
    std::vector<T> b;   // out_ch
    Tensor4<T> gw;
    std::vector<T> gb;

    Conv2D() = default;
    Conv2D(int in_c, int out_c, int k, int s)
        : in_ch(in_c), out_ch(out_c), kernel(k), stride(s), w(out_c, in_c, k, k),
          b(out_c, T(0)), gw(out_c, in_c, k, k), gb(out_c, T(0)) {
        require(s == 1 || s == 2, ErrorCode::BadConfig, "conv stride must be 1 or 2");
    }

    int out_dim(int in) const { return stride == 1 ? in : (in + 1) / 2; }
    int pad_before(int in) const {
        const int total = std::max((out_dim(in) - 1) * stride + kernel - in, 0);
        return total / 2;
    }

    // Samples per patch sheet. Batching columns across samples keeps the
    // GEMMs wide for late layers with tiny feature maps, while wide layers
    // stay near one sample per sheet so the sheet remains cache-resident.
    int sheet_group(int n, int K, int N) const {
        const std::size_t target_columns = 128;
        const std::size_t cap = std::size_t(1) << 24;  // sheet elements
        std::size_t g = std::max<std::size_t>(target_columns / std::max(N, 1), 1);
        g = std::min(g, std::max<std::size_t>(cap / std::max<std::size_t>(std::size_t(K) * N, 1),
                                              1));
        return int(std::min(g, std::size_t(n)));
    }

    // Writes one sample's patch matrix into a sheet whose row q begins at
    // col + q * ld; the caller offsets col to this sample's column block.
    void im2col(const Tensor4<T>& x, int n, int out_h, int out_w, T* col, std::size_t ld) const {
        const int pb_y = pad_before(x.h), pb_x = pad_before(x.w);
        std::size_t q = 0;
        for (int ic = 0; ic < in_ch; ++ic) {
            const T* plane = x.plane(n, ic);
            for (int ky = 0; ky < kernel; ++ky)
                for (int kx = 0; kx < kernel; ++kx, ++q) {
                    T* row = col + q * ld;
                    for (int oy = 0; oy < out_h; ++oy) {
                        const int iy = oy * stride + ky - pb_y;
                        T* dst = row + static_cast<std::size_t>(oy) * out_w;
                        if (iy < 0 || iy >= x.h) {
                            std::fill(dst, dst + out_w, T(0));
                            continue;
                        }
                        const T* src = plane + static_cast<std::size_t>(iy) * x.w;
                        for (int ox = 0; ox < out_w; ++ox) {
                            const int ix = ox * stride + kx - pb_x;
                            dst[ox] = (ix < 0 || ix >= x.w) ? T(0) : src[ix];
                        }
                    }
                }
        }
    }

    Tensor4<T> forward(const Tensor4<T>& x) const {
        require(x.c == in_ch, ErrorCode::ShapeMismatch,
                "conv expects " + std::to_string(in_ch) + " channels, got " + std::to_string(x.c));
        require(x.h >= kernel / 2 + 1 && x.w >= kernel / 2 + 1, ErrorCode::ShapeMismatch,
                "input too small for kernel");
        const int out_h = out_dim(x.h), out_w = out_dim(x.w);
        const int K = in_ch * kernel * kernel, N = out_h * out_w;
        Tensor4<T> y(x.n, out_ch, out_h, out_w);
        const int group = sheet_group(x.n, K, N);
        std::vector<T> col(std::size_t(K) * group * N);
        std::vector<T> out(std::size_t(out_ch) * group * N);
        for (int n0 = 0; n0 < x.n; n0 += group) {
            const int g = std::min(group, x.n - n0);
            const std::size_t bn = std::size_t(g) * N;
#pragma omp parallel for schedule(static)
            for (int s = 0; s < g; ++s)
                im2col(x, n0 + s, out_h, out_w, col.data() + std::size_t(s) * N, bn);
            std::fill(out.begin(), out.begin() + std::size_t(out_ch) * bn, T(0));
            gemm_accumulate(out_ch, int(bn), K, w.v.data(), K, col.data(), int(bn), out.data(),
                            int(bn));
#pragma omp parallel for schedule(static)
            for (int s = 0; s < g; ++s)
                for (int oc = 0; oc < out_ch; ++oc) {
                    const T* src = out.data() + std::size_t(oc) * bn + std::size_t(s) * N;
                    T* dst = y.plane(n0 + s, oc);
                    const T bias = b[oc];
                    for (int i = 0; i < N; ++i) dst[i] = src[i] + bias;
                }
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& gy) {
        const int out_h = out_dim(x.h), out_w = out_dim(x.w);
        require(gy.n == x.n && gy.c == out_ch && gy.h == out_h && gy.w == out_w,
                ErrorCode::ShapeMismatch, "conv backward shape mismatch");
        const int K = in_ch * kernel * kernel, N = out_h * out_w;
        const int pb_y = pad_before(x.h), pb_x = pad_before(x.w);

        std::vector<T> wT(static_cast<std::size_t>(K) * out_ch);
        transpose(out_ch, K, w.v.data(), K, wT.data(), out_ch);

        Tensor4<T> gx(x.n, x.c, x.h, x.w);
        gw.fill(T(0));
        std::fill(gb.begin(), gb.end(), T(0));

        const int group = sheet_group(x.n, K, N);
        std::vector<T> col(std::size_t(K) * group * N);
        std::vector<T> colT(std::size_t(group) * N * K);
        std::vector<T> gcol(std::size_t(K) * group * N);
        std::vector<T> gall(std::size_t(out_ch) * group * N);
        for (int n0 = 0; n0 < x.n; n0 += group) {
            const int g = std::min(group, x.n - n0);
            const std::size_t bn = std::size_t(g) * N;
#pragma omp parallel for schedule(static)
            for (int s = 0; s < g; ++s)
                for (int oc = 0; oc < out_ch; ++oc) {
                    const T* src = gy.plane(n0 + s, oc);
                    T* dst = gall.data() + std::size_t(oc) * bn + std::size_t(s) * N;
                    for (int i = 0; i < N; ++i) dst[i] = src[i];
                }
            for (int oc = 0; oc < out_ch; ++oc) {
                const T* row = gall.data() + std::size_t(oc) * bn;
                T s = 0;
                for (std::size_t i = 0; i < bn; ++i) s += row[i];
                gb[oc] += s;
            }
#pragma omp parallel for schedule(static)
            for (int s = 0; s < g; ++s)
                im2col(x, n0 + s, out_h, out_w, col.data() + std::size_t(s) * N, bn);
            transpose(K, int(bn), col.data(), int(bn), colT.data(), K);
            gemm_accumulate(out_ch, K, int(bn), gall.data(), int(bn), colT.data(), K, gw.v.data(),
                            K);

            std::fill(gcol.begin(), gcol.begin() + std::size_t(K) * bn, T(0));
            gemm_accumulate(K, int(bn), out_ch, wT.data(), out_ch, gall.data(), int(bn),
                            gcol.data(), int(bn));
            // col2im: scatter-add each sample's columns back onto its input
            // gradient. Samples own disjoint gx planes, so this parallelizes.
#pragma omp parallel for schedule(static)
            for (int s = 0; s < g; ++s) {
                std::size_t q = 0;
                for (int ic = 0; ic < in_ch; ++ic) {
                    T* plane = gx.plane(n0 + s, ic);
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx, ++q) {
                            const T* row = gcol.data() + q * bn + std::size_t(s) * N;
                            for (int oy = 0; oy < out_h; ++oy) {
                                const int iy = oy * stride + ky - pb_y;
                                if (iy < 0 || iy >= x.h) continue;
                                T* dst = plane + static_cast<std::size_t>(iy) * x.w;
                                const T* src = row + static_cast<std::size_t>(oy) * out_w;
                                for (int ox = 0; ox < out_w; ++ox) {
                                    const int ix = ox * stride + kx - pb_x;
                                    if (ix >= 0 && ix < x.w) dst[ix] += src[ox];
                                }
                            }
                        }
                }
            }
        }
        return gx;
    }
};

template <typename T>
struct BatchNorm {
    int channels = 0;
    double momentum = 0.1;
    double eps = 1e-5;
    std::vector<T> gamma, beta, running_mean, running_var;
    std::vector<T> ggamma, gbeta;

    BatchNorm() = default;
    explicit BatchNorm(int ch)
        : channels(ch), gamma(ch, T(1)), beta(ch, T(0)), running_mean(ch, T(0)),
          running_var(ch, T(1)), ggamma(ch, T(0)), gbeta(ch, T(0)) {}

    // Batch statistics cached by the Train forward for the matching backward.
    std::vector<T> mean_, ivar_;

    Tensor4<T> forward(const Tensor4<T>& x, Mode mode) {
        require(x.c == channels, ErrorCode::ShapeMismatch, "batchnorm channel mismatch");
        Tensor4<T> y(x.n, x.c, x.h, x.w);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        if (mode == Mode::Train) {
            require(x.n >= 2, ErrorCode::BatchTooSmall, "batchnorm needs batch >= 2 in Train mode");
            mean_.assign(channels, T(0));
            ivar_.assign(channels, T(0));
            const double m = static_cast<double>(x.n) * plane;
            for (int c = 0; c < channels; ++c) {
                double sum = 0.0;
                for (int n = 0; n < x.n; ++n) {
                    const T* p = x.plane(n, c);
                    for (std::size_t i = 0; i < plane; ++i) sum += p[i];
                }
                const double mu = sum / m;
                double var = 0.0;
                for (int n = 0; n < x.n; ++n) {
                    const T* p = x.plane(n, c);
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double d = p[i] - mu;
                        var += d * d;
                    }
                }
                var /= m;  // population variance
                const double iv = 1.0 / std::sqrt(var + eps);
                mean_[c] = T(mu);
                ivar_[c] = T(iv);
                running_mean[c] = T((1.0 - momentum) * running_mean[c] + momentum * mu);
                running_var[c] = T((1.0 - momentum) * running_var[c] + momentum * var);
                const double g = gamma[c], bt = beta[c];
                for (int n = 0; n < x.n; ++n) {
                    const T* p = x.plane(n, c);
                    T* q = y.plane(n, c);
                    for (std::size_t i = 0; i < plane; ++i)
                        q[i] = T(g * ((p[i] - mu) * iv) + bt);
                }
            }
        } else {
            for (int c = 0; c < channels; ++c) {
                const double mu = running_mean[c];
                const double iv = 1.0 / std::sqrt(double(running_var[c]) + eps);
                const double g = gamma[c], bt = beta[c];
                for (int n = 0; n < x.n; ++n) {
                    const T* p = x.plane(n, c);
                    T* q = y.plane(n, c);
                    for (std::size_t i = 0; i < plane; ++i)
                        q[i] = T(g * ((p[i] - mu) * iv) + bt);
                }
            }
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& gy) {
        require(gy.same_shape(x), ErrorCode::ShapeMismatch, "batchnorm backward shape mismatch");
        require(!mean_.empty(), ErrorCode::ModeError, "batchnorm backward before Train forward");
        Tensor4<T> gx(x.n, x.c, x.h, x.w);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        const double m = static_cast<double>(x.n) * plane;
        for (int c = 0; c < channels; ++c) {
            const double mu = mean_[c], iv = ivar_[c], g = gamma[c];
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const T* xp = x.plane(n, c);
                const T* gp = gy.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xhat = (xp[i] - mu) * iv;
                    sum_gy += gp[i];
                    sum_gy_xhat += gp[i] * xhat;
                }
            }
            ggamma[c] = T(sum_gy_xhat);
            gbeta[c] = T(sum_gy);
            for (int n = 0; n < x.n; ++n) {
                const T* xp = x.plane(n, c);
                const T* gp = gy.plane(n, c);
                T* q = gx.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xhat = (xp[i] - mu) * iv;
                    q[i] = T(g * iv / m * (m * gp[i] - sum_gy - xhat * sum_gy_xhat));
                }
            }
        }
        return gx;
    }
};

struct Elu {
    template <typename T>
    Tensor4<T> forward(const Tensor4<T>& x) const {
        Tensor4<T> y = x;
        for (T& v : y.v) v = v > T(0) ? v : T(std::expm1(double(v)));
        return y;
    }
    template <typename T>
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& gy) const {
        Tensor4<T> gx(x.n, x.c, x.h, x.w);
        for (std::size_t i = 0; i < x.size(); ++i)
            gx.v[i] = x.v[i] > T(0) ? gy.v[i] : T(gy.v[i] * std::exp(double(x.v[i])));
        return gx;
    }
};

struct Sigmoid {
    template <typename T>
    Tensor4<T> forward(const Tensor4<T>& x) const {
        Tensor4<T> y = x;
        for (T& v : y.v) v = T(1.0 / (1.0 + std::exp(-double(v))));
        return y;
    }
    template <typename T>
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& gy) const {
        Tensor4<T> gx(x.n, x.c, x.h, x.w);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-double(x.v[i])));
            gx.v[i] = T(gy.v[i] * s * (1.0 - s));
        }
        return gx;
    }
};

struct Softmax {
    // Applies over the class axis of an (n, classes, 1, 1) tensor.
    template <typename T>
    Tensor4<T> forward(const Tensor4<T>& x) const {
        require(x.h == 1 && x.w == 1, ErrorCode::ShapeMismatch,
                "softmax expects an (n, classes, 1, 1) tensor");
        Tensor4<T> y = x;
        for (int n = 0; n < x.n; ++n) {
            T* row = y.sample(n);
            double mx = row[0];
            for (int c = 1; c < x.c; ++c) mx = std::max(mx, double(row[c]));
            double sum = 0.0;
            for (int c = 0; c < x.c; ++c) sum += std::exp(double(row[c]) - mx);
            for (int c = 0; c < x.c; ++c)
                row[c] = T(std::exp(double(row[c]) - mx) / sum);
        }
        return y;
    }
    template <typename T>
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& gy) const {
        const Tensor4<T> y = forward(x);
        Tensor4<T> gx(x.n, x.c, x.h, x.w);
        for (int n = 0; n < x.n; ++n) {
            const T* yr = y.sample(n);
            const T* gr = gy.sample(n);
            T* out = gx.sample(n);
            double dot = 0.0;
            for (int c = 0; c < x.c; ++c) dot += double(gr[c]) * yr[c];
            for (int c = 0; c < x.c; ++c) out[c] = T(yr[c] * (double(gr[c]) - dot));
        }
        return gx;
    }
};

struct MaxPool {
    // 2x2 windows at stride 2; trailing odd rows/columns are dropped.
    template <typename T>
    Tensor4<T> forward(const Tensor4<T>& x) const {
        require(x.h >= 2 && x.w >= 2, ErrorCode::ShapeMismatch, "maxpool needs at least 2x2");
        const int oh = x.h / 2, ow = x.w / 2;
        Tensor4<T> y(x.n, x.c, oh, ow);
        for (int n = 0; n < x.n; ++n)
            for (int c = 0; c < x.c; ++c) {
                const T* p = x.plane(n, c);
                T* q = y.plane(n, c);
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const T* w0 = p + static_cast<std::size_t>(2 * oy) * x.w + 2 * ox;
                        T m = w0[0];
                        m = std::max(m, w0[1]);
                        m = std::max(m, w0[x.w]);
                        m = std::max(m, w0[x.w + 1]);
                        q[static_cast<std::size_t>(oy) * ow + ox] = m;
                    }
            }
        return y;
    }
    template <typename T>
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& gy) const {
        const int oh = x.h / 2, ow = x.w / 2;
        require(gy.n == x.n && gy.c == x.c && gy.h == oh && gy.w == ow, ErrorCode::ShapeMismatch,
                "maxpool backward shape mismatch");
        Tensor4<T> gx(x.n, x.c, x.h, x.w);
        for (int n = 0; n < x.n; ++n)
            for (int c = 0; c < x.c; ++c) {
                const T* p = x.plane(n, c);
                T* q = gx.plane(n, c);
                const T* g = gy.plane(n, c);
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const std::size_t base = static_cast<std::size_t>(2 * oy) * x.w + 2 * ox;
                        // First maximum in row-major window order wins ties.
                        std::size_t best = base;
                        if (p[base + 1] > p[best]) best = base + 1;
                        if (p[base + x.w] > p[best]) best = base + x.w;
                        if (p[base + x.w + 1] > p[best]) best = base + x.w + 1;
                        q[best] += g[static_cast<std::size_t>(oy) * ow + ox];
                    }
            }
        return gx;
    }
};

struct GlobalAvgPool {
    template <typename T>
    Tensor4<T> forward(const Tensor4<T>& x) const {
        Tensor4<T> y(x.n, x.c, 1, 1);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        for (int n = 0; n < x.n; ++n)
            for (int c = 0; c < x.c; ++c) {
                const T* p = x.plane(n, c);
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
                y.at(n, c, 0, 0) = T(s / plane);
            }
        return y;
    }
    template <typename T>
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& gy) const {
        Tensor4<T> gx(x.n, x.c, x.h, x.w);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        for (int n = 0; n < x.n; ++n)
            for (int c = 0; c < x.c; ++c) {
                const T share = T(double(gy.at(n, c, 0, 0)) / plane);
                T* q = gx.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) q[i] = share;
            }
        return gx;
    }
};

template <typename T>
struct Dense {
    int in_features = 0, out_features = 0;
    std::vector<T> w;  // row-major (in_features, out_features)
    std::vector<T> b;
    std::vector<T> gw, gb;

    Dense() = default;
    Dense(int in_f, int out_f)
        : in_features(in_f), out_features(out_f),
          w(static_cast<std::size_t>(in_f) * out_f, T(0)), b(out_f, T(0)),
          gw(static_cast<std::size_t>(in_f) * out_f, T(0)), gb(out_f, T(0)) {}

    Tensor4<T> forward(const Tensor4<T>& x) const {
        require(x.features() == in_features, ErrorCode::ShapeMismatch,
                "dense expects " + std::to_string(in_features) + " features, got " +
                    std::to_string(x.features()));
        Tensor4<T> y(x.n, out_features, 1, 1);
        gemm_accumulate(x.n, out_features, in_features, x.v.data(), in_features, w.data(),
                        out_features, y.v.data(), out_features);
        for (int n = 0; n < x.n; ++n) {
            T* row = y.sample(n);
            for (int o = 0; o < out_features; ++o) row[o] += b[o];
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& gy) {
        require(gy.n == x.n && gy.features() == out_features, ErrorCode::ShapeMismatch,
                "dense backward shape mismatch");
        std::fill(gw.begin(), gw.end(), T(0));
        std::fill(gb.begin(), gb.end(), T(0));
        for (int n = 0; n < x.n; ++n) {
            const T* row = gy.sample(n);
            for (int o = 0; o < out_features; ++o) gb[o] += row[o];
        }
        std::vector<T> xT(static_cast<std::size_t>(in_features) * x.n);
        transpose(x.n, in_features, x.v.data(), in_features, xT.data(), x.n);
        gemm_accumulate(in_features, out_features, x.n, xT.data(), x.n, gy.v.data(), out_features,
                        gw.data(), out_features);

        std::vector<T> wT(static_cast<std::size_t>(out_features) * in_features);
        transpose(in_features, out_features, w.data(), out_features, wT.data(), in_features);
        Tensor4<T> gx(x.n, x.c, x.h, x.w);
        gemm_accumulate(x.n, in_features, out_features, gy.v.data(), out_features, wT.data(),
                        in_features, gx.v.data(), in_features);
        return gx;
    }
};

}  // namespace tipstate
