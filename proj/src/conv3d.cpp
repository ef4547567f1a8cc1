#include "afn/conv3d.hpp"

#include "afn/kernels.hpp"

#include <algorithm>
#include <string>

namespace afn {

void ConvSpec::validate() const {
    if (in_channels < 1 || out_channels < 1)
        throw ShapeError("ConvSpec: channels must be >= 1");
    if (dilation < 1)
        throw ShapeError("ConvSpec: dilation must be >= 1");
    for (int k : kernel)
        if (k < 1)
            throw ShapeError("ConvSpec: kernel extents must be >= 1");
    for (int s : stride)
        if (s < 1)
            throw ShapeError("ConvSpec: strides must be >= 1");
    if (padding == Padding::Same)
        for (int k : kernel)
            if (k % 2 == 0)
                throw ShapeError("ConvSpec: same padding needs odd kernel extents");
}

std::array<int, 3> ConvSpec::pad_amounts() const {
    if (padding == Padding::Valid)
        return {0, 0, 0};
    return {dilation * (kernel[0] - 1) / 2, dilation * (kernel[1] - 1) / 2,
            dilation * (kernel[2] - 1) / 2};
}

Shape conv3d_out_shape(const Shape& in_shape, const ConvSpec& spec) {
    spec.validate();
    if (in_shape.size() != 4 && in_shape.size() != 5)
        throw ShapeError("conv3d: input must be rank 4 or 5, got " +
                         shape_str(in_shape));
    bool batched = in_shape.size() == 5;
    int c_axis = batched ? 1 : 0;
    if (in_shape[static_cast<size_t>(c_axis)] != spec.in_channels)
        throw ShapeError("conv3d: input has " +
                         std::to_string(in_shape[static_cast<size_t>(c_axis)]) +
                         " channels, spec expects " +
                         std::to_string(spec.in_channels));
    auto p = spec.pad_amounts();
    Shape out;
    if (batched)
        out.push_back(in_shape[0]);
    out.push_back(spec.out_channels);
    for (int ax = 0; ax < 3; ++ax) {
        int in_e = in_shape[static_cast<size_t>(c_axis + 1 + ax)];
        int span = spec.dilation * (spec.kernel[static_cast<size_t>(ax)] - 1);
        int num = in_e + 2 * p[static_cast<size_t>(ax)] - span - 1;
        if (num < 0)
            throw ShapeError("conv3d: output extent < 1 on axis " +
                             std::to_string(ax) + " for input " +
                             shape_str(in_shape));
        out.push_back(num / spec.stride[static_cast<size_t>(ax)] + 1);
    }
    return out;
}

namespace {

struct Dims {
    int ci, co;
    int D, H, W;    // input spatial
    int Do, Ho, Wo; // output spatial
    std::array<int, 3> p;
};

bool unit_stride(const ConvSpec& s) {
    return s.stride[0] == 1 && s.stride[1] == 1 && s.stride[2] == 1;
}

// One sample, stride 1: every kernel tap contributes an axpy over a
// contiguous x-span shared between input and output rows.
void forward_one(const double* in, const double* w, const double* bias,
                 double* out, const ConvSpec& spec, const Dims& d) {
    const auto& k = kernels::active();
    const std::int64_t in_c = static_cast<std::int64_t>(d.D) * d.H * d.W;
    const std::int64_t out_c = static_cast<std::int64_t>(d.Do) * d.Ho * d.Wo;
    const int r = spec.dilation;
    for (int co = 0; co < d.co; ++co) {
        double b = bias ? bias[co] : 0.0;
        std::fill(out + co * out_c, out + (co + 1) * out_c, b);
    }
    for (int co = 0; co < d.co; ++co) {
        double* outc = out + co * out_c;
        for (int ci = 0; ci < d.ci; ++ci) {
            const double* inc = in + ci * in_c;
            const double* wtap =
                w + (static_cast<std::int64_t>(co) * d.ci + ci) *
                        (spec.kernel[0] * spec.kernel[1] * spec.kernel[2]);
            for (int kz = 0; kz < spec.kernel[0]; ++kz)
                for (int ky = 0; ky < spec.kernel[1]; ++ky)
                    for (int kx = 0; kx < spec.kernel[2]; ++kx, ++wtap) {
                        double wgt = *wtap;
                        if (wgt == 0.0)
                            continue;
                        int dz = r * kz - d.p[0];
                        int dy = r * ky - d.p[1];
                        int dx = r * kx - d.p[2];
                        int z0 = std::max(0, -dz), z1 = std::min(d.Do, d.D - dz);
                        int y0 = std::max(0, -dy), y1 = std::min(d.Ho, d.H - dy);
                        int x0 = std::max(0, -dx), x1 = std::min(d.Wo, d.W - dx);
                        if (x1 <= x0)
                            continue;
                        std::size_t len = static_cast<std::size_t>(x1 - x0);
                        for (int oz = z0; oz < z1; ++oz)
                            for (int oy = y0; oy < y1; ++oy) {
                                const double* src =
                                    inc +
                                    (static_cast<std::int64_t>(oz + dz) * d.H +
                                     (oy + dy)) *
                                        d.W +
                                    x0 + dx;
                                double* dst =
                                    outc +
                                    (static_cast<std::int64_t>(oz) * d.Ho + oy) *
                                        d.Wo +
                                    x0;
                                k.axpy(len, wgt, src, dst);
                            }
                    }
        }
    }
}

// Generic strided fallback; only used by non-unit-stride specs.
void forward_one_strided(const double* in, const double* w, const double* bias,
                         double* out, const ConvSpec& spec, const Dims& d) {
    const std::int64_t in_c = static_cast<std::int64_t>(d.D) * d.H * d.W;
    const std::int64_t out_c = static_cast<std::int64_t>(d.Do) * d.Ho * d.Wo;
    const int r = spec.dilation;
    for (int co = 0; co < d.co; ++co) {
        double* outc = out + co * out_c;
        for (int oz = 0; oz < d.Do; ++oz)
            for (int oy = 0; oy < d.Ho; ++oy)
                for (int ox = 0; ox < d.Wo; ++ox) {
                    double acc = bias ? bias[co] : 0.0;
                    for (int ci = 0; ci < d.ci; ++ci) {
                        const double* inc = in + ci * in_c;
                        const double* wtap =
                            w + (static_cast<std::int64_t>(co) * d.ci + ci) *
                                    (spec.kernel[0] * spec.kernel[1] *
                                     spec.kernel[2]);
                        for (int kz = 0; kz < spec.kernel[0]; ++kz)
                            for (int ky = 0; ky < spec.kernel[1]; ++ky)
                                for (int kx = 0; kx < spec.kernel[2];
                                     ++kx, ++wtap) {
                                    int iz = oz * spec.stride[0] + r * kz - d.p[0];
                                    int iy = oy * spec.stride[1] + r * ky - d.p[1];
                                    int ix = ox * spec.stride[2] + r * kx - d.p[2];
                                    if (iz < 0 || iz >= d.D || iy < 0 ||
                                        iy >= d.H || ix < 0 || ix >= d.W)
                                        continue;
                                    acc += *wtap *
                                           inc[(static_cast<std::int64_t>(iz) *
                                                    d.H +
                                                iy) *
                                                   d.W +
                                               ix];
                                }
                    }
                    outc[(static_cast<std::int64_t>(oz) * d.Ho + oy) * d.Wo + ox] =
                        acc;
                }
    }
}

void backward_one(const double* in, const double* w, const double* dout,
                  double* din, double* dw, double* dbias, const ConvSpec& spec,
                  const Dims& d) {
    const auto& k = kernels::active();
    const std::int64_t in_c = static_cast<std::int64_t>(d.D) * d.H * d.W;
    const std::int64_t out_c = static_cast<std::int64_t>(d.Do) * d.Ho * d.Wo;
    const int r = spec.dilation;
    if (dbias)
        for (int co = 0; co < d.co; ++co)
            dbias[co] += k.sum(static_cast<std::size_t>(out_c), dout + co * out_c);
    if (!din && !dw)
        return;
    for (int co = 0; co < d.co; ++co) {
        const double* doutc = dout + co * out_c;
        for (int ci = 0; ci < d.ci; ++ci) {
            const double* inc = in + ci * in_c;
            double* dinc = din ? din + ci * in_c : nullptr;
            std::int64_t wbase = (static_cast<std::int64_t>(co) * d.ci + ci) *
                                 (spec.kernel[0] * spec.kernel[1] * spec.kernel[2]);
            std::int64_t t = 0;
            for (int kz = 0; kz < spec.kernel[0]; ++kz)
                for (int ky = 0; ky < spec.kernel[1]; ++ky)
                    for (int kx = 0; kx < spec.kernel[2]; ++kx, ++t) {
                        int dz = r * kz - d.p[0];
                        int dy = r * ky - d.p[1];
                        int dx = r * kx - d.p[2];
                        int z0 = std::max(0, -dz), z1 = std::min(d.Do, d.D - dz);
                        int y0 = std::max(0, -dy), y1 = std::min(d.Ho, d.H - dy);
                        int x0 = std::max(0, -dx), x1 = std::min(d.Wo, d.W - dx);
                        if (x1 <= x0)
                            continue;
                        std::size_t len = static_cast<std::size_t>(x1 - x0);
                        double wgt = w[wbase + t];
                        double wacc = 0.0;
                        for (int oz = z0; oz < z1; ++oz)
                            for (int oy = y0; oy < y1; ++oy) {
                                std::int64_t in_off =
                                    (static_cast<std::int64_t>(oz + dz) * d.H +
                                     (oy + dy)) *
                                        d.W +
                                    x0 + dx;
                                std::int64_t out_off =
                                    (static_cast<std::int64_t>(oz) * d.Ho + oy) *
                                        d.Wo +
                                    x0;
                                if (dinc)
                                    k.axpy(len, wgt, doutc + out_off,
                                           dinc + in_off);
                                if (dw)
                                    wacc += k.dot(len, doutc + out_off,
                                                  inc + in_off);
                            }
                        if (dw)
                            dw[wbase + t] += wacc;
                    }
        }
    }
}

void backward_one_strided(const double* in, const double* w, const double* dout,
                          double* din, double* dw, double* dbias,
                          const ConvSpec& spec, const Dims& d) {
    const std::int64_t in_c = static_cast<std::int64_t>(d.D) * d.H * d.W;
    const std::int64_t out_c = static_cast<std::int64_t>(d.Do) * d.Ho * d.Wo;
    const int r = spec.dilation;
    for (int co = 0; co < d.co; ++co) {
        const double* doutc = dout + co * out_c;
        for (int oz = 0; oz < d.Do; ++oz)
            for (int oy = 0; oy < d.Ho; ++oy)
                for (int ox = 0; ox < d.Wo; ++ox) {
                    double g = doutc[(static_cast<std::int64_t>(oz) * d.Ho + oy) *
                                         d.Wo +
                                     ox];
                    for (int ci = 0; ci < d.ci; ++ci) {
                        std::int64_t wbase =
                            (static_cast<std::int64_t>(co) * d.ci + ci) *
                            (spec.kernel[0] * spec.kernel[1] * spec.kernel[2]);
                        std::int64_t t = 0;
                        for (int kz = 0; kz < spec.kernel[0]; ++kz)
                            for (int ky = 0; ky < spec.kernel[1]; ++ky)
                                for (int kx = 0; kx < spec.kernel[2]; ++kx, ++t) {
                                    int iz = oz * spec.stride[0] + r * kz - d.p[0];
                                    int iy = oy * spec.stride[1] + r * ky - d.p[1];
                                    int ix = ox * spec.stride[2] + r * kx - d.p[2];
                                    if (iz < 0 || iz >= d.D || iy < 0 ||
                                        iy >= d.H || ix < 0 || ix >= d.W)
                                        continue;
                                    std::int64_t in_off =
                                        ci * in_c +
                                        (static_cast<std::int64_t>(iz) * d.H + iy) *
                                            d.W +
                                        ix;
                                    if (din)
                                        din[in_off] += w[wbase + t] * g;
                                    if (dw)
                                        dw[wbase + t] += in[in_off] * g;
                                }
                    }
                }
        if (dbias)
            dbias[co] +=
                kernels::active().sum(static_cast<std::size_t>(out_c), doutc);
    }
}

Dims make_dims(const Shape& in_shape, const Shape& out_shape, const ConvSpec& spec) {
    bool batched = in_shape.size() == 5;
    int o = batched ? 1 : 0;
    Dims d;
    d.ci = spec.in_channels;
    d.co = spec.out_channels;
    d.D = in_shape[static_cast<size_t>(o + 1)];
    d.H = in_shape[static_cast<size_t>(o + 2)];
    d.W = in_shape[static_cast<size_t>(o + 3)];
    d.Do = out_shape[static_cast<size_t>(o + 1)];
    d.Ho = out_shape[static_cast<size_t>(o + 2)];
    d.Wo = out_shape[static_cast<size_t>(o + 3)];
    d.p = spec.pad_amounts();
    return d;
}

void check_kernel_shape(const Tensor& kernel, const ConvSpec& spec) {
    Shape want{spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1],
               spec.kernel[2]};
    if (kernel.shape() != want)
        throw ShapeError("conv3d: kernel shape " + shape_str(kernel.shape()) +
                         " does not match spec " + shape_str(want));
}

} // namespace

Tensor conv3d_forward(const Tensor& in, const Tensor& kernel, const Tensor* bias,
                      const ConvSpec& spec) {
    Shape out_shape = conv3d_out_shape(in.shape(), spec);
    check_kernel_shape(kernel, spec);
    if (bias && bias->shape() != Shape{spec.out_channels})
        throw ShapeError("conv3d: bias shape " + shape_str(bias->shape()));
    Tensor out = Tensor::zeros(out_shape);
    Dims d = make_dims(in.shape(), out_shape, spec);
    bool batched = in.rank() == 5;
    int n = batched ? in.extent(0) : 1;
    std::int64_t in_n = static_cast<std::int64_t>(d.ci) * d.D * d.H * d.W;
    std::int64_t out_n = static_cast<std::int64_t>(d.co) * d.Do * d.Ho * d.Wo;
    for (int b = 0; b < n; ++b) {
        const double* ip = in.data() + b * in_n;
        double* op = out.data() + b * out_n;
        if (unit_stride(spec))
            forward_one(ip, kernel.data(), bias ? bias->data() : nullptr, op,
                        spec, d);
        else
            forward_one_strided(ip, kernel.data(), bias ? bias->data() : nullptr,
                                op, spec, d);
    }
    return out;
}

void conv3d_backward(const Tensor& in, const Tensor& kernel, const ConvSpec& spec,
                     const Tensor& dout, Tensor* din, Tensor* dkernel,
                     Tensor* dbias) {
    Shape out_shape = conv3d_out_shape(in.shape(), spec);
    check_kernel_shape(kernel, spec);
    if (dout.shape() != out_shape)
        throw ShapeError("conv3d backward: dout shape " + shape_str(dout.shape()) +
                         " expected " + shape_str(out_shape));
    Dims d = make_dims(in.shape(), out_shape, spec);
    bool batched = in.rank() == 5;
    int n = batched ? in.extent(0) : 1;
    std::int64_t in_n = static_cast<std::int64_t>(d.ci) * d.D * d.H * d.W;
    std::int64_t out_n = static_cast<std::int64_t>(d.co) * d.Do * d.Ho * d.Wo;
    for (int b = 0; b < n; ++b) {
        const double* ip = in.data() + b * in_n;
        const double* gp = dout.data() + b * out_n;
        double* dip = din ? din->data() + b * in_n : nullptr;
        if (unit_stride(spec))
            backward_one(ip, kernel.data(), gp, dip,
                         dkernel ? dkernel->data() : nullptr,
                         dbias ? dbias->data() : nullptr, spec, d);
        else
            backward_one_strided(ip, kernel.data(), gp, dip,
                                 dkernel ? dkernel->data() : nullptr,
                                 dbias ? dbias->data() : nullptr, spec, d);
    }
}

} // namespace afn
