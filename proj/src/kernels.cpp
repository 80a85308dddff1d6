#include "layoutforge/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>

namespace lf::kernels {

namespace scalar {

double sum(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double sumsq(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}

double sumsq_diff(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

void scale(std::span<double> y, double a) {
    for (double& v : y) v *= a;
}

void mul(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    assert(a.size() == b.size() && a.size() == out.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
}

void clamp(std::span<double> y, double lo, double hi) {
    for (double& v : y) v = std::clamp(v, lo, hi);
}

} // namespace scalar

namespace {

struct Vtable {
    double (*sum)(std::span<const double>);
    double (*dot)(std::span<const double>, std::span<const double>);
    double (*sumsq)(std::span<const double>);
    double (*sumsq_diff)(std::span<const double>, std::span<const double>);
    void (*axpy)(double, std::span<const double>, std::span<double>);
    void (*scale)(std::span<double>, double);
    void (*mul)(std::span<const double>, std::span<const double>, std::span<double>);
    void (*clamp)(std::span<double>, double, double);
};

constexpr Vtable kScalarVt = {scalar::sum, scalar::dot,   scalar::sumsq, scalar::sumsq_diff,
                              scalar::axpy, scalar::scale, scalar::mul,   scalar::clamp};
constexpr Vtable kAvx2Vt = {avx2::sum, avx2::dot,   avx2::sumsq, avx2::sumsq_diff,
                            avx2::axpy, avx2::scale, avx2::mul,   avx2::clamp};

std::atomic<const Vtable*> g_vt{nullptr};
std::atomic<Backend> g_backend{Backend::scalar};

const Vtable* vt() {
    const Vtable* t = g_vt.load(std::memory_order_acquire);
    if (t) return t;
    if (avx2_supported()) {
        g_backend.store(Backend::avx2, std::memory_order_relaxed);
        t = &kAvx2Vt;
    } else {
        g_backend.store(Backend::scalar, std::memory_order_relaxed);
        t = &kScalarVt;
    }
    g_vt.store(t, std::memory_order_release);
    return t;
}

} // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
    return avx2::compiled() && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend active_backend() {
    vt();
    return g_backend.load(std::memory_order_relaxed);
}

bool set_backend(Backend b) {
    if (b == Backend::avx2 && !avx2_supported()) return false;
    g_backend.store(b, std::memory_order_relaxed);
    g_vt.store(b == Backend::avx2 ? &kAvx2Vt : &kScalarVt, std::memory_order_release);
    return true;
}

const char* backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

double sum(std::span<const double> x) { return vt()->sum(x); }
double dot(std::span<const double> a, std::span<const double> b) { return vt()->dot(a, b); }
double sumsq(std::span<const double> x) { return vt()->sumsq(x); }
double sumsq_diff(std::span<const double> a, std::span<const double> b) { return vt()->sumsq_diff(a, b); }
void axpy(double a, std::span<const double> x, std::span<double> y) { vt()->axpy(a, x, y); }
void scale(std::span<double> y, double a) { vt()->scale(y, a); }
void mul(std::span<const double> a, std::span<const double> b, std::span<double> out) { vt()->mul(a, b, out); }
void clamp(std::span<double> y, double lo, double hi) { vt()->clamp(y, lo, hi); }

} // namespace lf::kernels
