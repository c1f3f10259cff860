#include "kbl/simd.hpp"

#include <stdexcept>

namespace kbl::simd {

namespace {

Backend g_backend = Backend::Scalar;
const Kernels* g_kernels = &scalar_kernels();
bool g_initialized = false;

void pick_auto() {
#if defined(__x86_64__) && defined(KBL_BUILD_AVX2)
    if (avx2_supported()) {
        g_backend = Backend::Avx2;
        g_kernels = &avx2_kernels();
        return;
    }
#endif
#if defined(__aarch64__) && defined(KBL_BUILD_NEON)
    g_backend = Backend::Neon;
    g_kernels = &neon_kernels();
    return;
#endif
    g_backend = Backend::Scalar;
    g_kernels = &scalar_kernels();
}

void ensure_init() {
    if (!g_initialized) {
        pick_auto();
        g_initialized = true;
    }
}

}  // namespace

void select_backend(const std::string& name) {
    if (name == "auto") {
        pick_auto();
    } else if (name == "scalar") {
        g_backend = Backend::Scalar;
        g_kernels = &scalar_kernels();
    } else if (name == "avx2") {
#if defined(__x86_64__) && defined(KBL_BUILD_AVX2)
        if (!avx2_supported()) throw std::runtime_error("simd: avx2 requested but not supported by this cpu");
        g_backend = Backend::Avx2;
        g_kernels = &avx2_kernels();
#else
        throw std::runtime_error("simd: avx2 backend not built");
#endif
    } else if (name == "neon") {
#if defined(__aarch64__) && defined(KBL_BUILD_NEON)
        g_backend = Backend::Neon;
        g_kernels = &neon_kernels();
#else
        throw std::runtime_error("simd: neon backend not built");
#endif
    } else {
        throw std::invalid_argument("simd: unknown backend '" + name + "'");
    }
    g_initialized = true;
}

Backend active_backend() {
    ensure_init();
    return g_backend;
}

const char* backend_name() {
    ensure_init();
    switch (g_backend) {
        case Backend::Avx2: return "avx2";
        case Backend::Neon: return "neon";
        default: return "scalar";
    }
}

const Kernels& active() {
    ensure_init();
    return *g_kernels;
}

}  // namespace kbl::simd
