#pragma once

// Independent nested-loop reference implementations used to cross-check the
// production kernels. Deliberately written in the most naive way possible:
// plain index arithmetic, bounds checks instead of padding, sequential sums.

#include "afn/conv3d.hpp"
#include "afn/rng.hpp"
#include "afn/tensor.hpp"

#include <vector>

namespace oracle {

inline afn::Tensor random_tensor(const afn::Shape& shape, afn::Rng& rng,
                                 double scale = 1.0) {
    afn::Tensor t = afn::Tensor::zeros(shape);
    for (std::int64_t i = 0; i < t.size(); ++i)
        t[i] = scale * rng.normal();
    return t;
}

// Reference dilated 3D convolution on a rank-4 [C',D,H,W] input.
// kernel [C,C',kd,kh,kw]; out-of-range taps read as zero (same mode) or are
// never touched (valid mode shrinks the output).
inline afn::Tensor conv3d(const afn::Tensor& in, const afn::Tensor& kernel,
                          const afn::Tensor* bias, int r, bool same) {
    int Cin = in.extent(0), D = in.extent(1), H = in.extent(2), W = in.extent(3);
    int Cout = kernel.extent(0);
    int kd = kernel.extent(2), kh = kernel.extent(3), kw = kernel.extent(4);
    int pd = same ? r * (kd - 1) / 2 : 0;
    int ph = same ? r * (kh - 1) / 2 : 0;
    int pw = same ? r * (kw - 1) / 2 : 0;
    int Do = same ? D : D - r * (kd - 1);
    int Ho = same ? H : H - r * (kh - 1);
    int Wo = same ? W : W - r * (kw - 1);
    afn::Tensor out = afn::Tensor::zeros({Cout, Do, Ho, Wo});
    for (int co = 0; co < Cout; ++co)
        for (int z = 0; z < Do; ++z)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    double acc = bias ? (*bias)[co] : 0.0;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int a = 0; a < kd; ++a)
                            for (int b = 0; b < kh; ++b)
                                for (int c = 0; c < kw; ++c) {
                                    int iz = z - pd + r * a;
                                    int iy = y - ph + r * b;
                                    int ix = x - pw + r * c;
                                    if (iz < 0 || iz >= D || iy < 0 || iy >= H ||
                                        ix < 0 || ix >= W)
                                        continue;
                                    double kv = kernel[(((static_cast<std::int64_t>(
                                                             co) *
                                                             Cin +
                                                         ci) *
                                                            kd +
                                                        a) *
                                                           kh +
                                                       b) *
                                                          kw +
                                                      c];
                                    double iv = in[((static_cast<std::int64_t>(
                                                        ci) *
                                                        D +
                                                    iz) *
                                                       H +
                                                   iy) *
                                                      W +
                                                  ix];
                                    acc += kv * iv;
                                }
                    out[((static_cast<std::int64_t>(co) * Do + z) * Ho + y) * Wo +
                        x] = acc;
                }
    return out;
}

inline double max_abs_diff(const afn::Tensor& a, const afn::Tensor& b) {
    double m = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        if (d < 0)
            d = -d;
        if (d > m)
            m = d;
    }
    return m;
}

inline bool bitwise_equal(const afn::Tensor& a, const afn::Tensor& b) {
    if (a.shape() != b.shape())
        return false;
    for (std::int64_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i])
            return false;
    return true;
}

} // namespace oracle
