// AVX2 backend. Compiled with -mavx2 on x86_64 only; runtime selection is
// guarded by cpuid in kernels.cpp. Uses separate mul+add rather than FMA so
// results are bitwise identical to the scalar backend (same lane layout,
// same combine order), which lets the equivalence tests assert exact
// equality.
#include "afn/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

namespace afn::kernels {
namespace {

void axpy_avx2(std::size_t n, double a, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vx = _mm256_loadu_pd(x + i);
        __m256d vy = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, vx)));
    }
    for (; i < n; ++i)
        y[i] += a * x[i];
}

double hsum_lanes(__m256d acc) {
    // (l0+l1)+(l2+l3), matching the scalar backend
    __m128d lo = _mm256_castpd256_pd128(acc);
    __m128d hi = _mm256_extractf128_pd(acc, 1);
    __m128d pair = _mm_hadd_pd(lo, hi); // (l0+l1, l2+l3)
    return _mm_cvtsd_f64(pair) + _mm_cvtsd_f64(_mm_unpackhi_pd(pair, pair));
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vx = _mm256_loadu_pd(x + i);
        __m256d vy = _mm256_loadu_pd(y + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(vx, vy));
    }
    double s = hsum_lanes(acc);
    for (; i < n; ++i)
        s += x[i] * y[i];
    return s;
}

double sum_avx2(std::size_t n, const double* x) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum_lanes(acc);
    for (; i < n; ++i)
        s += x[i];
    return s;
}

void add_avx2(std::size_t n, const double* a, const double* b, double* out) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    for (; i < n; ++i)
        out[i] = a[i] + b[i];
}

void sub_avx2(std::size_t n, const double* a, const double* b, double* out) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    for (; i < n; ++i)
        out[i] = a[i] - b[i];
}

void mul_avx2(std::size_t n, const double* a, const double* b, double* out) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    for (; i < n; ++i)
        out[i] = a[i] * b[i];
}

void scale_avx2(std::size_t n, double a, const double* x, double* out) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i)
        out[i] = a * x[i];
}

void relu_avx2(std::size_t n, const double* x, double* out) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i)
        out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

} // namespace

const Ops* avx2_ops_impl() {
    static const Ops ops{
        "avx2",   axpy_avx2, dot_avx2, sum_avx2,  add_avx2,
        sub_avx2, mul_avx2,  scale_avx2, relu_avx2,
    };
    return &ops;
}

} // namespace afn::kernels

#else

namespace afn::kernels {
const Ops* avx2_ops_impl() { return nullptr; }
} // namespace afn::kernels

#endif
