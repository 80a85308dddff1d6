#include "layoutforge/kernels.hpp"

#include <cassert>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

namespace lf::kernels::avx2 {

#if defined(__AVX2__) && defined(__FMA__)

bool compiled() { return true; }

namespace {
inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}
} // namespace

double sum(std::span<const double> x) {
    const double* p = x.data();
    size_t n = x.size(), i = 0;
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(p + i));
        acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(p + i + 4));
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(p + i));
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += p[i];
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    const double *pa = a.data(), *pb = b.data();
    size_t n = a.size(), i = 0;
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + i), _mm256_loadu_pd(pb + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + i + 4), _mm256_loadu_pd(pb + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + i), _mm256_loadu_pd(pb + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += pa[i] * pb[i];
    return s;
}

double sumsq(std::span<const double> x) { return dot(x, x); }

double sumsq_diff(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    const double *pa = a.data(), *pb = b.data();
    size_t n = a.size(), i = 0;
    __m256d acc = _mm256_setzero_pd();
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(pa + i), _mm256_loadu_pd(pb + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = pa[i] - pb[i];
        s += d * d;
    }
    return s;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    const double* px = x.data();
    double* py = y.data();
    size_t n = x.size(), i = 0;
    const __m256d va = _mm256_set1_pd(a);
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(py + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(px + i), _mm256_loadu_pd(py + i)));
    for (; i < n; ++i) py[i] += a * px[i];
}

void scale(std::span<double> y, double a) {
    double* py = y.data();
    size_t n = y.size(), i = 0;
    const __m256d va = _mm256_set1_pd(a);
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(py + i, _mm256_mul_pd(va, _mm256_loadu_pd(py + i)));
    for (; i < n; ++i) py[i] *= a;
}

void mul(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    assert(a.size() == b.size() && a.size() == out.size());
    const double *pa = a.data(), *pb = b.data();
    double* po = out.data();
    size_t n = a.size(), i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(po + i, _mm256_mul_pd(_mm256_loadu_pd(pa + i), _mm256_loadu_pd(pb + i)));
    for (; i < n; ++i) po[i] = pa[i] * pb[i];
}

void clamp(std::span<double> y, double lo, double hi) {
    double* py = y.data();
    size_t n = y.size(), i = 0;
    const __m256d vlo = _mm256_set1_pd(lo), vhi = _mm256_set1_pd(hi);
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(py + i, _mm256_min_pd(vhi, _mm256_max_pd(vlo, _mm256_loadu_pd(py + i))));
    for (; i < n; ++i) py[i] = py[i] < lo ? lo : (py[i] > hi ? hi : py[i]);
}

#else // no AVX2 at compile time: forward to the reference kernels

bool compiled() { return false; }

double sum(std::span<const double> x) { return scalar::sum(x); }
double dot(std::span<const double> a, std::span<const double> b) { return scalar::dot(a, b); }
double sumsq(std::span<const double> x) { return scalar::sumsq(x); }
double sumsq_diff(std::span<const double> a, std::span<const double> b) { return scalar::sumsq_diff(a, b); }
void axpy(double a, std::span<const double> x, std::span<double> y) { scalar::axpy(a, x, y); }
void scale(std::span<double> y, double a) { scalar::scale(y, a); }
void mul(std::span<const double> a, std::span<const double> b, std::span<double> out) { scalar::mul(a, b, out); }
void clamp(std::span<double> y, double lo, double hi) { scalar::clamp(y, lo, hi); }

#endif

} // namespace lf::kernels::avx2
