#pragma once

#include <cstddef>
#include <cstdint>

// Data-parallel inner loops used by the tensor library. Every kernel has a
// scalar reference implementation; for float there is an AVX2 variant
// selected at runtime. Per-element kernels are bit-identical across
// backends, reductions and GEMM may differ in the last ulps because of
// accumulation order and FMA contraction.
namespace segdt::kernels {

enum class Backend { scalar, avx2 };

const char* backend_name(Backend b);
bool backend_supported(Backend b);
Backend active_backend();
// Throws std::invalid_argument if the backend is not supported on this CPU.
void set_backend(Backend b);

// Honors SEGDT_KERNELS=scalar|avx2|auto. Called lazily on first dispatch.
Backend default_backend();

struct FloatKernels {
    void (*add)(const float* a, const float* b, float* out, std::size_t n);
    void (*sub)(const float* a, const float* b, float* out, std::size_t n);
    void (*mul)(const float* a, const float* b, float* out, std::size_t n);
    void (*scale)(const float* a, float s, float* out, std::size_t n);
    // y += a * x
    void (*axpy)(float a, const float* x, float* y, std::size_t n);
    float (*dot)(const float* a, const float* b, std::size_t n);
    float (*sum)(const float* a, std::size_t n);
    float (*max)(const float* a, std::size_t n);
    bool (*all_finite)(const float* a, std::size_t n);
    // C[m x n] (+)= A[m x k] * B[k x n], all row-major.
    void (*gemm_nn)(const float* a, const float* b, float* c, std::size_t m,
                    std::size_t n, std::size_t k, bool accumulate);
    // C[m x n] (+)= A[m x k] * B^T, B stored row-major [n x k].
    void (*gemm_nt)(const float* a, const float* b, float* c, std::size_t m,
                    std::size_t n, std::size_t k, bool accumulate);
    // In-place Adam with precomputed bias corrections.
    void (*adam_update)(float* p, const float* g, float* m, float* v,
                        std::size_t n, float lr, float beta1, float beta2,
                        float eps, float bias1, float bias2);
};

const FloatKernels& table(Backend b);
const FloatKernels& active();

namespace scalar {

template <class T> void add(const T* a, const T* b, T* out, std::size_t n);
template <class T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <class T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <class T> void scale(const T* a, T s, T* out, std::size_t n);
template <class T> void axpy(T a, const T* x, T* y, std::size_t n);
template <class T> T dot(const T* a, const T* b, std::size_t n);
template <class T> T sum(const T* a, std::size_t n);
template <class T> T max(const T* a, std::size_t n);
template <class T> bool all_finite(const T* a, std::size_t n);
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate);
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate);
template <class T>
void adam_update(T* p, const T* g, T* m, T* v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T bias1, T bias2);

} // namespace scalar

// Typed entry points. float goes through the dispatch table, double always
// uses the scalar reference path (the fp64 mode exists for gradient checks,
// not speed).
inline void add(const float* a, const float* b, float* o, std::size_t n) { active().add(a, b, o, n); }
inline void sub(const float* a, const float* b, float* o, std::size_t n) { active().sub(a, b, o, n); }
inline void mul(const float* a, const float* b, float* o, std::size_t n) { active().mul(a, b, o, n); }
inline void scale(const float* a, float s, float* o, std::size_t n) { active().scale(a, s, o, n); }
inline void axpy(float a, const float* x, float* y, std::size_t n) { active().axpy(a, x, y, n); }
inline float dot(const float* a, const float* b, std::size_t n) { return active().dot(a, b, n); }
inline float sum(const float* a, std::size_t n) { return active().sum(a, n); }
inline float max(const float* a, std::size_t n) { return active().max(a, n); }
inline bool all_finite(const float* a, std::size_t n) { return active().all_finite(a, n); }
inline void gemm_nn(const float* a, const float* b, float* c, std::size_t m,
                    std::size_t n, std::size_t k, bool acc = false) {
    active().gemm_nn(a, b, c, m, n, k, acc);
}
inline void gemm_nt(const float* a, const float* b, float* c, std::size_t m,
                    std::size_t n, std::size_t k, bool acc = false) {
    active().gemm_nt(a, b, c, m, n, k, acc);
}
inline void adam_update(float* p, const float* g, float* m, float* v,
                        std::size_t n, float lr, float b1, float b2, float eps,
                        float c1, float c2) {
    active().adam_update(p, g, m, v, n, lr, b1, b2, eps, c1, c2);
}

inline void add(const double* a, const double* b, double* o, std::size_t n) { scalar::add(a, b, o, n); }
inline void sub(const double* a, const double* b, double* o, std::size_t n) { scalar::sub(a, b, o, n); }
inline void mul(const double* a, const double* b, double* o, std::size_t n) { scalar::mul(a, b, o, n); }
inline void scale(const double* a, double s, double* o, std::size_t n) { scalar::scale(a, s, o, n); }
inline void axpy(double a, const double* x, double* y, std::size_t n) { scalar::axpy(a, x, y, n); }
inline double dot(const double* a, const double* b, std::size_t n) { return scalar::dot(a, b, n); }
inline double sum(const double* a, std::size_t n) { return scalar::sum(a, n); }
inline double max(const double* a, std::size_t n) { return scalar::max(a, n); }
inline bool all_finite(const double* a, std::size_t n) { return scalar::all_finite(a, n); }
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k, bool acc = false) {
    scalar::gemm_nn(a, b, c, m, n, k, acc);
}
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k, bool acc = false) {
    scalar::gemm_nt(a, b, c, m, n, k, acc);
}
inline void adam_update(double* p, const double* g, double* m, double* v,
                        std::size_t n, double lr, double b1, double b2,
                        double eps, double c1, double c2) {
    scalar::adam_update(p, g, m, v, n, lr, b1, b2, eps, c1, c2);
}

} // namespace segdt::kernels
