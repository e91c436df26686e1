#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "tipstate/layers.hpp"
#include "tipstate/rng.hpp"

using namespace tipstate;

namespace {

Tensor4<double> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double scale = 1.0) {
    Tensor4<double> t(n, c, h, w);
    Rng rng(seed);
    for (double& v : t.v) v = rng.uniform(-scale, scale);
    return t;
}

// Six nested loops, no tricks: the reference the GEMM path must match.
Tensor4<double> conv_naive(const Tensor4<double>& x, const Conv2D<double>& conv) {
    const int oh = conv.out_dim(x.h), ow = conv.out_dim(x.w);
    const int pb_y = conv.pad_before(x.h), pb_x = conv.pad_before(x.w);
    Tensor4<double> y(x.n, conv.out_ch, oh, ow);
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < conv.out_ch; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = conv.b[oc];
                    for (int ic = 0; ic < conv.in_ch; ++ic)
                        for (int ky = 0; ky < conv.kernel; ++ky)
                            for (int kx = 0; kx < conv.kernel; ++kx) {
                                const int iy = oy * conv.stride + ky - pb_y;
                                const int ix = ox * conv.stride + kx - pb_x;
                                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                                acc += x.at(n, ic, iy, ix) * conv.w.at(oc, ic, ky, kx);
                            }
                    y.at(n, oc, oy, ox) = acc;
                }
    return y;
}

double max_abs_diff(const Tensor4<double>& a, const Tensor4<double>& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

}  // namespace

TEST_CASE("identity kernel passes the input through") {
    Conv2D<double> conv(1, 1, 3, 1);
    conv.w.at(0, 0, 1, 1) = 1.0;
    const Tensor4<double> x = random_tensor(2, 1, 12, 12, 1);
    const Tensor4<double> y = conv.forward(x);
    REQUIRE(max_abs_diff(y, x) == 0.0);
}

TEST_CASE("all-ones kernel sums 3x3 patches of a constant image") {
    Conv2D<double> conv(1, 1, 3, 1);
    conv.w.fill(1.0);
    Tensor4<double> x(1, 1, 10, 10);
    x.fill(0.5);
    const Tensor4<double> y = conv.forward(x);
    for (int oy = 1; oy < 9; ++oy)
        for (int ox = 1; ox < 9; ++ox)
            REQUIRE(std::abs(y.at(0, 0, oy, ox) - 9 * 0.5) < 1e-12);
    REQUIRE(std::abs(y.at(0, 0, 0, 0) - 4 * 0.5) < 1e-12);  // corner: padded
}

TEST_CASE("gemm convolution matches the naive loops on random shapes") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const int in_ch = 1 + int(rng.index(4));
        const int out_ch = 1 + int(rng.index(6));
        const int h = 4 + int(rng.index(13));
        const int w = 4 + int(rng.index(13));
        const int n = 1 + int(rng.index(3));
        const int stride = 1 + int(rng.index(2));
        Conv2D<double> conv(in_ch, out_ch, 3, stride);
        Rng wr(1000 + trial);
        for (double& v : conv.w.v) v = wr.uniform(-1.0, 1.0);
        for (double& v : conv.b) v = wr.uniform(-0.5, 0.5);
        const Tensor4<double> x = random_tensor(n, in_ch, h, w, 2000 + trial);
        REQUIRE(max_abs_diff(conv.forward(x), conv_naive(x, conv)) < 1e-10);
    }
}

TEST_CASE("stride-2 convolution halves spatial dims with ceil rounding") {
    Conv2D<double> conv(1, 2, 3, 2);
    REQUIRE(conv.forward(random_tensor(1, 1, 128, 128, 3)).h == 64);
    REQUIRE(conv.forward(random_tensor(1, 1, 9, 9, 3)).h == 5);
    REQUIRE(conv.forward(random_tensor(1, 1, 7, 12, 3)).w == 6);
}

TEST_CASE("conv rejects channel mismatches") {
    Conv2D<double> conv(3, 4, 3, 1);
    REQUIRE_THROWS_MATCHES(conv.forward(random_tensor(1, 2, 8, 8, 1)), Error,
                           ErrorCodeIs(ErrorCode::ShapeMismatch));
}

TEST_CASE("zero upstream gradient produces zero conv gradients") {
    Conv2D<double> conv(2, 3, 3, 1);
    Rng wr(5);
    for (double& v : conv.w.v) v = wr.uniform(-1.0, 1.0);
    const Tensor4<double> x = random_tensor(2, 2, 8, 8, 6);
    const Tensor4<double> y = conv.forward(x);
    Tensor4<double> gy(y.n, y.c, y.h, y.w);
    const Tensor4<double> gx = conv.backward(x, gy);
    for (double v : gx.v) REQUIRE(v == 0.0);
    for (double v : conv.gw.v) REQUIRE(v == 0.0);
    for (double v : conv.gb) REQUIRE(v == 0.0);
}

TEST_CASE("single-pixel upstream gradient recovers the input patch") {
    Conv2D<double> conv(1, 1, 3, 1);
    Rng wr(7);
    for (double& v : conv.w.v) v = wr.uniform(-1.0, 1.0);
    const Tensor4<double> x = random_tensor(1, 1, 8, 8, 8);
    const Tensor4<double> y = conv.forward(x);
    Tensor4<double> gy(y.n, y.c, y.h, y.w);
    gy.at(0, 0, 4, 5) = 1.0;  // interior pixel, patch fully inside
    conv.backward(x, gy);
    for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
            REQUIRE(std::abs(conv.gw.at(0, 0, ky, kx) - x.at(0, 0, 3 + ky, 4 + kx)) < 1e-12);
    REQUIRE(conv.gb[0] == 1.0);
}

TEST_CASE("conv backward matches finite differences") {
    Conv2D<double> conv(2, 3, 3, 2);
    Rng wr(9);
    for (double& v : conv.w.v) v = wr.uniform(-1.0, 1.0);
    for (double& v : conv.b) v = wr.uniform(-0.5, 0.5);
    const Tensor4<double> x = random_tensor(2, 2, 7, 7, 10);
    // Scalar loss: weighted sum of outputs with fixed random coefficients.
    const Tensor4<double> y0 = conv.forward(x);
    Tensor4<double> coeff(y0.n, y0.c, y0.h, y0.w);
    Rng cr(11);
    for (double& v : coeff.v) v = cr.uniform(-1.0, 1.0);
    auto loss_of = [&](const Tensor4<double>& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += coeff.v[i] * y.v[i];
        return s;
    };
    const Tensor4<double> gx = conv.backward(x, coeff);
    const double h = 1e-6;
    Rng pick(12);
    for (int probe = 0; probe < 40; ++probe) {
        const std::size_t k = pick.index(conv.w.size());
        Conv2D<double> c2 = conv;
        c2.w.v[k] += h;
        const double lp = loss_of(c2.forward(x));
        c2.w.v[k] -= 2 * h;
        const double lm = loss_of(c2.forward(x));
        const double numeric = (lp - lm) / (2 * h);
        REQUIRE(std::abs(conv.gw.v[k] - numeric) < 1e-4 * std::max(1.0, std::abs(numeric)));
    }
    for (int probe = 0; probe < 40; ++probe) {
        const std::size_t k = pick.index(x.size());
        Tensor4<double> x2 = x;
        x2.v[k] += h;
        const double lp = loss_of(conv.forward(x2));
        x2.v[k] -= 2 * h;
        const double lm = loss_of(conv.forward(x2));
        const double numeric = (lp - lm) / (2 * h);
        REQUIRE(std::abs(gx.v[k] - numeric) < 1e-4 * std::max(1.0, std::abs(numeric)));
    }
}

TEST_CASE("train-mode batchnorm standardizes each channel") {
    BatchNorm<double> bn(3);
    const Tensor4<double> x = random_tensor(4, 3, 6, 6, 20, 3.0);
    const Tensor4<double> y = bn.forward(x, Mode::Train);
    const double m = 4.0 * 36.0;
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 36; ++i) {
                const double v = y.plane(n, c)[i];
                sum += v;
                sq += v * v;
            }
        const double mean = sum / m;
        const double var = sq / m - mean * mean;
        REQUIRE(std::abs(mean) < 1e-9);
        REQUIRE(std::abs(var - 1.0) < 1e-4);  // eps shrinks variance slightly
    }
}

TEST_CASE("gamma and beta scale and shift the standardized output") {
    BatchNorm<double> bn(1);
    bn.gamma[0] = 2.0;
    bn.beta[0] = 3.0;
    const Tensor4<double> x = random_tensor(8, 1, 4, 4, 21, 2.0);
    const Tensor4<double> y = bn.forward(x, Mode::Train);
    double sum = 0.0, sq = 0.0;
    for (double v : y.v) {
        sum += v;
        sq += v * v;
    }
    const double mean = sum / y.size();
    const double sd = std::sqrt(sq / y.size() - mean * mean);
    REQUIRE(std::abs(mean - 3.0) < 1e-9);
    REQUIRE(std::abs(sd - 2.0) < 1e-3);
}

TEST_CASE("batchnorm running stats converge to the batch stats") {
    BatchNorm<double> bn(1);
    const Tensor4<double> x = random_tensor(4, 1, 5, 5, 22, 1.0);
    for (int i = 0; i < 200; ++i) bn.forward(x, Mode::Train);
    // Same batch every step: running stats approach that batch's stats.
    double sum = 0.0;
    for (double v : x.v) sum += v;
    const double mu = sum / x.size();
    double var = 0.0;
    for (double v : x.v) var += (v - mu) * (v - mu);
    var /= x.size();
    REQUIRE(std::abs(bn.running_mean[0] - mu) < 1e-6);
    REQUIRE(std::abs(bn.running_var[0] - var) < 1e-6);
    // Infer mode then reproduces the train-mode normalization closely.
    const Tensor4<double> yi = bn.forward(x, Mode::Infer);
    const Tensor4<double> yt = bn.forward(x, Mode::Train);
    REQUIRE(max_abs_diff(yi, yt) < 1e-4);
}

TEST_CASE("batchnorm rejects tiny train batches but not infer ones") {
    BatchNorm<double> bn(2);
    const Tensor4<double> x = random_tensor(1, 2, 4, 4, 23);
    REQUIRE_THROWS_MATCHES(bn.forward(x, Mode::Train), Error,
                           ErrorCodeIs(ErrorCode::BatchTooSmall));
    REQUIRE_NOTHROW(bn.forward(x, Mode::Infer));
}

TEST_CASE("batchnorm backward matches finite differences") {
    BatchNorm<double> bn(3);
    Rng gr(24);
    for (int c = 0; c < 3; ++c) {
        bn.gamma[c] = gr.uniform(0.5, 1.5);
        bn.beta[c] = gr.uniform(-0.5, 0.5);
    }
    const Tensor4<double> x = random_tensor(4, 3, 5, 5, 25);
    Tensor4<double> coeff(4, 3, 5, 5);
    for (double& v : coeff.v) v = gr.uniform(-1.0, 1.0);
    auto loss_of = [&](BatchNorm<double>& layer, const Tensor4<double>& in) {
        const Tensor4<double> y = layer.forward(in, Mode::Train);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += coeff.v[i] * y.v[i];
        return s;
    };
    bn.forward(x, Mode::Train);
    const Tensor4<double> gx = bn.backward(x, coeff);
    const double h = 1e-6;
    Rng pick(26);
    for (int probe = 0; probe < 60; ++probe) {
        const std::size_t k = pick.index(x.size());
        BatchNorm<double> b2 = bn;
        Tensor4<double> x2 = x;
        x2.v[k] += h;
        const double lp = loss_of(b2, x2);
        x2.v[k] -= 2 * h;
        const double lm = loss_of(b2, x2);
        const double numeric = (lp - lm) / (2 * h);
        REQUIRE(std::abs(gx.v[k] - numeric) < 1e-4 * std::max(1.0, std::abs(numeric)));
    }
    for (int c = 0; c < 3; ++c) {
        BatchNorm<double> b2 = bn;
        b2.gamma[c] += h;
        const double lp = loss_of(b2, x);
        b2.gamma[c] -= 2 * h;
        const double lm = loss_of(b2, x);
        REQUIRE(std::abs(bn.ggamma[c] - (lp - lm) / (2 * h)) < 1e-4);
        BatchNorm<double> b3 = bn;
        b3.beta[c] += h;
        const double lpb = loss_of(b3, x);
        b3.beta[c] -= 2 * h;
        const double lmb = loss_of(b3, x);
        REQUIRE(std::abs(bn.gbeta[c] - (lpb - lmb) / (2 * h)) < 1e-4);
    }
}

TEST_CASE("elu closed-form values") {
    Tensor4<double> x(1, 4, 1, 1);
    x.v = {0.0, 1.0, -1.0, -5.0};
    const Tensor4<double> y = Elu{}.forward(x);
    REQUIRE(y.v[0] == 0.0);
    REQUIRE(y.v[1] == 1.0);
    REQUIRE(std::abs(y.v[2] - (std::exp(-1.0) - 1.0)) < 1e-12);
    REQUIRE(std::abs(y.v[2] - -0.6321) < 1e-4);
    REQUIRE(y.v[3] > -1.0);
}

TEST_CASE("sigmoid and softmax symmetry points") {
    Tensor4<double> x(1, 4, 1, 1);
    const Tensor4<double> sm = Softmax{}.forward(x);
    for (int c = 0; c < 4; ++c) REQUIRE(std::abs(sm.v[c] - 0.25) < 1e-12);
    const Tensor4<double> sg = Sigmoid{}.forward(x);
    for (int c = 0; c < 4; ++c) REQUIRE(sg.v[c] == 0.5);
}

TEST_CASE("softmax rows sum to one and survive extreme logits") {
    Tensor4<double> x = random_tensor(16, 6, 1, 1, 27, 1e3);
    const Tensor4<double> y = Softmax{}.forward(x);
    REQUIRE(y.all_finite());
    for (int n = 0; n < 16; ++n) {
        double s = 0.0;
        for (int c = 0; c < 6; ++c) s += y.sample(n)[c];
        REQUIRE(std::abs(s - 1.0) < 1e-9);
    }
    // Sigmoid saturates to exactly 0/1 at |logit| ~ 1e3; the closed interval
    // is the honest contract, and the loss clamp absorbs the endpoints.
    const Tensor4<double> sg = Sigmoid{}.forward(x);
    for (double v : sg.v) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
}

TEST_CASE("activations stay finite on extreme inputs") {
    Tensor4<double> x(1, 2, 2, 2);
    x.v = {1e3, -1e3, 750.0, -750.0, 0.0, 1.0, -1.0, 42.0};
    REQUIRE(Elu{}.forward(x).all_finite());
    REQUIRE(Sigmoid{}.forward(x).all_finite());
}

TEST_CASE("activation backward passes match finite differences") {
    const Tensor4<double> x = random_tensor(3, 5, 1, 1, 28, 2.0);
    Tensor4<double> coeff(3, 5, 1, 1);
    Rng cr(29);
    for (double& v : coeff.v) v = cr.uniform(-1.0, 1.0);
    const double h = 1e-6;
    auto check = [&](auto layer) {
        const Tensor4<double> gx = layer.backward(x, coeff);
        for (std::size_t k = 0; k < x.size(); ++k) {
            Tensor4<double> x2 = x;
            x2.v[k] += h;
            const Tensor4<double> yp = layer.forward(x2);
            x2.v[k] -= 2 * h;
            const Tensor4<double> ym = layer.forward(x2);
            double lp = 0.0, lm = 0.0;
            for (std::size_t i = 0; i < yp.size(); ++i) {
                lp += coeff.v[i] * yp.v[i];
                lm += coeff.v[i] * ym.v[i];
            }
            const double numeric = (lp - lm) / (2 * h);
            REQUIRE(std::abs(gx.v[k] - numeric) < 1e-5 * std::max(1.0, std::abs(numeric)));
        }
    };
    check(Elu{});
    check(Sigmoid{});
    check(Softmax{});
}

TEST_CASE("maxpool picks window maxima and floors odd dims") {
    Tensor4<double> x(1, 1, 4, 4);
    for (int i = 0; i < 16; ++i) x.v[i] = i;
    const Tensor4<double> y = MaxPool{}.forward(x);
    REQUIRE(y.h == 2);
    REQUIRE(y.at(0, 0, 0, 0) == 5.0);
    REQUIRE(y.at(0, 0, 1, 1) == 15.0);
    const Tensor4<double> odd = MaxPool{}.forward(random_tensor(1, 1, 7, 9, 30));
    REQUIRE(odd.h == 3);
    REQUIRE(odd.w == 4);
}

TEST_CASE("maxpool backward routes gradient to the argmax") {
    Tensor4<double> x(1, 1, 2, 2);
    x.v = {0.1, 0.9, 0.3, 0.2};
    const Tensor4<double> y = MaxPool{}.forward(x);
    Tensor4<double> gy(1, 1, 1, 1);
    gy.v[0] = 5.0;
    const Tensor4<double> gx = MaxPool{}.backward(x, gy);
    REQUIRE(gx.v == std::vector<double>{0.0, 5.0, 0.0, 0.0});
}

TEST_CASE("global average pool averages and spreads gradient evenly") {
    const Tensor4<double> x = random_tensor(2, 3, 4, 4, 31);
    const Tensor4<double> y = GlobalAvgPool{}.forward(x);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int i = 0; i < 16; ++i) s += x.plane(n, c)[i];
            REQUIRE(std::abs(y.at(n, c, 0, 0) - s / 16.0) < 1e-12);
        }
    Tensor4<double> gy(2, 3, 1, 1);
    gy.fill(1.0);
    const Tensor4<double> gx = GlobalAvgPool{}.backward(x, gy);
    for (double v : gx.v) REQUIRE(std::abs(v - 1.0 / 16.0) < 1e-15);
}

TEST_CASE("dense layer matches an explicit matrix product") {
    Dense<double> dense(6, 4);
    Rng wr(32);
    for (double& v : dense.w) v = wr.uniform(-1.0, 1.0);
    for (double& v : dense.b) v = wr.uniform(-0.5, 0.5);
    const Tensor4<double> x = random_tensor(3, 6, 1, 1, 33);
    const Tensor4<double> y = dense.forward(x);
    for (int n = 0; n < 3; ++n)
        for (int o = 0; o < 4; ++o) {
            double want = dense.b[o];
            for (int i = 0; i < 6; ++i) want += x.sample(n)[i] * dense.w[i * 4 + o];
            REQUIRE(std::abs(y.sample(n)[o] - want) < 1e-12);
        }
}

TEST_CASE("dense backward matches finite differences") {
    Dense<double> dense(5, 3);
    Rng wr(34);
    for (double& v : dense.w) v = wr.uniform(-1.0, 1.0);
    const Tensor4<double> x = random_tensor(4, 5, 1, 1, 35);
    Tensor4<double> coeff(4, 3, 1, 1);
    for (double& v : coeff.v) v = wr.uniform(-1.0, 1.0);
    auto loss_of = [&](Dense<double>& l, const Tensor4<double>& in) {
        const Tensor4<double> y = l.forward(in);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += coeff.v[i] * y.v[i];
        return s;
    };
    const Tensor4<double> gx = dense.backward(x, coeff);
    const double h = 1e-6;
    for (std::size_t k = 0; k < dense.w.size(); ++k) {
        Dense<double> d2 = dense;
        d2.w[k] += h;
        const double lp = loss_of(d2, x);
        d2.w[k] -= 2 * h;
        const double lm = loss_of(d2, x);
        REQUIRE(std::abs(dense.gw[k] - (lp - lm) / (2 * h)) < 1e-5);
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
        Tensor4<double> x2 = x;
        x2.v[k] += h;
        const double lp = loss_of(dense, x2);
        x2.v[k] -= 2 * h;
        const double lm = loss_of(dense, x2);
        REQUIRE(std::abs(gx.v[k] - (lp - lm) / (2 * h)) < 1e-5);
    }
    // Bias gradient is the column sum of upstream gradients.
    for (int o = 0; o < 3; ++o) {
        double want = 0.0;
        for (int n = 0; n < 4; ++n) want += coeff.sample(n)[o];
        REQUIRE(std::abs(dense.gb[o] - want) < 1e-12);
    }
}

TEST_CASE("dense rejects feature mismatches") {
    Dense<double> dense(8, 2);
    REQUIRE_THROWS_MATCHES(dense.forward(random_tensor(1, 7, 1, 1, 36)), Error,
                           ErrorCodeIs(ErrorCode::ShapeMismatch));
}

#ifdef _OPENMP
TEST_CASE("conv forward and backward are bit-identical across thread counts") {
    // Two regimes: a wide feature map that takes the row-blocked parallel
    // matrix product, and a tiny late-stage map where several samples share
    // one patch sheet. Neither result may depend on the thread count: every
    // output element is owned by exactly one thread and accumulated in a
    // fixed order.
    struct Shape {
        int n, in_ch, out_ch, side, stride;
    };
    const Shape shapes[] = {{8, 32, 256, 24, 1}, {32, 64, 96, 4, 1}};
    for (const auto& sh : shapes) {
        Conv2D<double> conv(sh.in_ch, sh.out_ch, 3, sh.stride);
        Rng rng(derive_seed(991, "conv-threads", static_cast<std::uint64_t>(sh.side)));
        for (double& v : conv.w.v) v = rng.uniform(-0.5, 0.5);
        for (double& v : conv.b) v = rng.uniform(-0.5, 0.5);
        const Tensor4<double> x = random_tensor(sh.n, sh.in_ch, sh.side, sh.side, 992);
        const Tensor4<double> gy =
            random_tensor(sh.n, sh.out_ch, conv.out_dim(sh.side), conv.out_dim(sh.side), 993);
        const int saved = omp_get_max_threads();
        std::vector<double> y1, gx1, gw1, gb1;
        for (int threads : {1, 2, 4}) {
            omp_set_num_threads(threads);
            const Tensor4<double> y = conv.forward(x);
            const Tensor4<double> gx = conv.backward(x, gy);
            if (threads == 1) {
                y1 = y.v;
                gx1 = gx.v;
                gw1 = conv.gw.v;
                gb1 = conv.gb;
            } else {
                REQUIRE(y.v == y1);
                REQUIRE(gx.v == gx1);
                REQUIRE(conv.gw.v == gw1);
                REQUIRE(conv.gb == gb1);
            }
        }
        omp_set_num_threads(saved);
    }
}
#endif
