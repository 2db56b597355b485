#include "segdt/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace segdt::kernels {

#if (defined(__x86_64__) || defined(_M_X64)) && defined(SEGDT_HAVE_AVX2_TU)
#define SEGDT_AVX2_AVAILABLE 1
namespace avx2 {
void add(const float*, const float*, float*, std::size_t);
void sub(const float*, const float*, float*, std::size_t);
void mul(const float*, const float*, float*, std::size_t);
void scale(const float*, float, float*, std::size_t);
void axpy(float, const float*, float*, std::size_t);
float dot(const float*, const float*, std::size_t);
float sum(const float*, std::size_t);
float max(const float*, std::size_t);
bool all_finite(const float*, std::size_t);
void gemm_nn(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
void gemm_nt(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
void adam_update(float*, const float*, float*, float*, std::size_t, float, float, float, float, float, float);
} // namespace avx2
#else
#define SEGDT_AVX2_AVAILABLE 0
#endif

namespace {

const FloatKernels kScalarTable = {
    &scalar::add<float>,    &scalar::sub<float>,
    &scalar::mul<float>,    &scalar::scale<float>,
    &scalar::axpy<float>,   &scalar::dot<float>,
    &scalar::sum<float>,    &scalar::max<float>,
    &scalar::all_finite<float>,
    &scalar::gemm_nn<float>, &scalar::gemm_nt<float>,
    &scalar::adam_update<float>,
};

#if SEGDT_AVX2_AVAILABLE
const FloatKernels kAvx2Table = {
    &avx2::add,     &avx2::sub,
    &avx2::mul,     &avx2::scale,
    &avx2::axpy,    &avx2::dot,
    &avx2::sum,     &avx2::max,
    &avx2::all_finite,
    &avx2::gemm_nn, &avx2::gemm_nt,
    &avx2::adam_update,
};
#endif

bool cpu_has_avx2() {
#if SEGDT_AVX2_AVAILABLE
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend resolve_default() {
    if (const char* env = std::getenv("SEGDT_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!cpu_has_avx2())
                throw std::invalid_argument("SEGDT_KERNELS=avx2 but CPU lacks AVX2/FMA");
            return Backend::avx2;
        }
        // anything else, including "auto", falls through
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend g_backend = resolve_default();

} // namespace

const char* backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

bool backend_supported(Backend b) {
    return b == Backend::scalar || cpu_has_avx2();
}

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
    if (!backend_supported(b))
        throw std::invalid_argument(std::string("kernel backend not supported on this CPU: ") +
                                    backend_name(b));
    g_backend = b;
}

Backend default_backend() { return resolve_default(); }

const FloatKernels& table(Backend b) {
#if SEGDT_AVX2_AVAILABLE
    if (b == Backend::avx2) return kAvx2Table;
#endif
    (void)b;
    return kScalarTable;
}

const FloatKernels& active() { return table(g_backend); }

} // namespace segdt::kernels
