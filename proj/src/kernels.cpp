#include "afn/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace afn::kernels {

const Ops* avx2_ops_impl(); // defined in kernels_avx2.cpp

const Ops* avx2_ops() {
#if defined(__x86_64__) || defined(_M_X64)
    if (!__builtin_cpu_supports("avx2"))
        return nullptr;
    return avx2_ops_impl();
#else
    return nullptr;
#endif
}

namespace {

const Ops* pick_auto() {
    if (const Ops* v = avx2_ops())
        return v;
    return &scalar_ops();
}

const Ops* initial() {
    if (const char* env = std::getenv("AFN_SIMD")) {
        std::string_view want(env);
        if (want == "scalar")
            return &scalar_ops();
        if (want == "avx2") {
            if (const Ops* v = avx2_ops())
                return v;
            throw std::runtime_error("AFN_SIMD=avx2 but AVX2 is unavailable");
        }
    }
    return pick_auto();
}

const Ops*& current() {
    static const Ops* ops = initial();
    return ops;
}

} // namespace

const Ops& active() { return *current(); }

void select(std::string_view backend) {
    if (backend == "scalar") {
        current() = &scalar_ops();
    } else if (backend == "avx2") {
        const Ops* v = avx2_ops();
        if (!v)
            throw std::runtime_error("AVX2 backend unavailable on this host");
        current() = v;
    } else if (backend == "auto") {
        current() = pick_auto();
    } else {
        throw std::runtime_error("unknown kernel backend: " + std::string(backend));
    }
}

} // namespace afn::kernels
