#include "afn/kernels.hpp"

#include <algorithm>

namespace afn::kernels {
namespace {

void axpy_scalar(std::size_t n, double a, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i)
        y[i] += a * x[i];
}

// Matches the AVX2 lane layout: 4 accumulators over stride-4 lanes,
// combined as (l0+l1)+(l2+l3), sequential tail.
double dot_scalar(std::size_t n, const double* x, const double* y) {
    double l0 = 0, l1 = 0, l2 = 0, l3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        l0 += x[i] * y[i];
        l1 += x[i + 1] * y[i + 1];
        l2 += x[i + 2] * y[i + 2];
        l3 += x[i + 3] * y[i + 3];
    }
    double s = (l0 + l1) + (l2 + l3);
    for (; i < n; ++i)
        s += x[i] * y[i];
    return s;
}

double sum_scalar(std::size_t n, const double* x) {
    double l0 = 0, l1 = 0, l2 = 0, l3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        l0 += x[i];
        l1 += x[i + 1];
        l2 += x[i + 2];
        l3 += x[i + 3];
    }
    double s = (l0 + l1) + (l2 + l3);
    for (; i < n; ++i)
        s += x[i];
    return s;
}

void add_scalar(std::size_t n, const double* a, const double* b, double* out) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] + b[i];
}

void sub_scalar(std::size_t n, const double* a, const double* b, double* out) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] - b[i];
}

void mul_scalar(std::size_t n, const double* a, const double* b, double* out) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] * b[i];
}

void scale_scalar(std::size_t n, double a, const double* x, double* out) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a * x[i];
}

void relu_scalar(std::size_t n, const double* x, double* out) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::max(x[i], 0.0);
}

} // namespace

const Ops& scalar_ops() {
    static const Ops ops{
        "scalar",   axpy_scalar, dot_scalar, sum_scalar,
        add_scalar, sub_scalar,  mul_scalar, scale_scalar,
        relu_scalar,
    };
    return ops;
}

} // namespace afn::kernels
