#pragma once
// Data-parallel f64 primitives behind runtime CPU dispatch.
//
// Every operation has a scalar reference implementation (kernels::scalar) and
// an AVX2 variant (kernels::avx2) compiled in its own translation unit. The
// top-level entry points route through function pointers chosen at startup
// from CPUID; tests compare the backends for equivalence. Transcendentals
// (exp/log) stay scalar so results never depend on a vendor vector-math
// library.

#include <cstddef>
#include <span>

namespace lf::kernels {

enum class Backend { scalar, avx2 };

bool avx2_supported();
Backend active_backend();
// Returns false (and leaves dispatch unchanged) if the backend is unavailable.
bool set_backend(Backend b);
const char* backend_name(Backend b);

double sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double sumsq(std::span<const double> x);
// sum_i (a[i]-b[i])^2
double sumsq_diff(std::span<const double> a, std::span<const double> b);
// y[i] += a*x[i]
void axpy(double a, std::span<const double> x, std::span<double> y);
// y[i] *= a
void scale(std::span<double> y, double a);
// out[i] = a[i]*b[i]
void mul(std::span<const double> a, std::span<const double> b, std::span<double> out);
void clamp(std::span<double> y, double lo, double hi);

namespace scalar {
double sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double sumsq(std::span<const double> x);
double sumsq_diff(std::span<const double> a, std::span<const double> b);
void axpy(double a, std::span<const double> x, std::span<double> y);
void scale(std::span<double> y, double a);
void mul(std::span<const double> a, std::span<const double> b, std::span<double> out);
void clamp(std::span<double> y, double lo, double hi);
} // namespace scalar

// Falls back to scalar when the library was built without AVX2 support.
namespace avx2 {
// true when this translation unit was compiled with AVX2+FMA enabled
bool compiled();
double sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double sumsq(std::span<const double> x);
double sumsq_diff(std::span<const double> a, std::span<const double> b);
void axpy(double a, std::span<const double> x, std::span<double> y);
void scale(std::span<double> y, double a);
void mul(std::span<const double> a, std::span<const double> b, std::span<double> out);
void clamp(std::span<double> y, double lo, double hi);
} // namespace avx2

} // namespace lf::kernels
