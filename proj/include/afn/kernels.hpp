#pragma once

#include <cstddef>
#include <string_view>

namespace afn::kernels {

// Flat double-precision kernels used by the tensor and convolution inner
// loops. Two backends: a scalar reference and an AVX2 variant compiled in a
// separate translation unit. The active backend is picked once at startup
// (AFN_SIMD=scalar|avx2|auto overrides the cpuid probe).
//
// Reduction order: `sum` and `dot` accumulate in 4 independent lanes over
// blocks of 4 elements (lane j sees elements j, j+4, j+8, ...) and combine
// lanes as (l0+l1)+(l2+l3), then fold the tail sequentially. The scalar
// backend follows the same order so both backends are bitwise identical.
struct Ops {
    const char* name;
    // y[i] += a * x[i]
    void (*axpy)(std::size_t n, double a, const double* x, double* y);
    // sum_i x[i] * y[i]
    double (*dot)(std::size_t n, const double* x, const double* y);
    double (*sum)(std::size_t n, const double* x);
    void (*add)(std::size_t n, const double* a, const double* b, double* out);
    void (*sub)(std::size_t n, const double* a, const double* b, double* out);
    void (*mul)(std::size_t n, const double* a, const double* b, double* out);
    // out[i] = a * x[i]
    void (*scale)(std::size_t n, double a, const double* x, double* out);
    // out[i] = max(x[i], 0)
    void (*relu)(std::size_t n, const double* x, double* out);
};

const Ops& scalar_ops();
// nullptr when the binary or the host lacks AVX2.
const Ops* avx2_ops();

// Currently selected backend.
const Ops& active();
// Force a backend: "scalar", "avx2" or "auto". Throws on unknown names or
// when "avx2" is requested but unavailable.
void select(std::string_view backend);

} // namespace afn::kernels
