#pragma once

#include <cstddef>

// Data-parallel primitives behind the decode/attention path and the trace
// reductions. Every operation has a scalar reference implementation and,
// on x86-64 builds, an AVX2 variant. The active backend is resolved once
// (CPU probe, overridable via the PULSEFOCUS_KERNELS environment variable
// or set_backend) and applies process-wide.
//
// Scalar and AVX2 reductions differ by floating-point reassociation only;
// equivalence is tested to tight relative tolerance, not bit-exactness.
// Within one backend, results are bit-stable run to run.

namespace pf::kernels {

enum class Backend { Scalar, Avx2 };

bool avx2_available();
Backend active_backend();

// Forces a backend; throws std::invalid_argument if unsupported here.
void set_backend(Backend b);

// Parses "scalar" / "avx2" / "auto"; throws std::invalid_argument otherwise.
void set_backend(const char* name);

const char* backend_name(Backend b);

double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
double max(const double* x, std::size_t n);  // n >= 1

// y += a * x
void axpy(double a, const double* x, double* y, std::size_t n);
// y += x
void add(double* y, const double* x, std::size_t n);
// x *= s
void scale(double* x, double s, std::size_t n);

// In-place max-subtracted softmax over x[0..n). exp() stays scalar libm in
// both backends; only the max/sum/scale reductions use the active backend.
void softmax(double* x, std::size_t n);

namespace detail {

double dot_scalar(const double* a, const double* b, std::size_t n);
double sum_scalar(const double* x, std::size_t n);
double max_scalar(const double* x, std::size_t n);
void axpy_scalar(double a, const double* x, double* y, std::size_t n);
void add_scalar(double* y, const double* x, std::size_t n);
void scale_scalar(double* x, double s, std::size_t n);

#ifdef PF_HAVE_AVX2
double dot_avx2(const double* a, const double* b, std::size_t n);
double sum_avx2(const double* x, std::size_t n);
double max_avx2(const double* x, std::size_t n);
void axpy_avx2(double a, const double* x, double* y, std::size_t n);
void add_avx2(double* y, const double* x, std::size_t n);
void scale_avx2(double* x, double s, std::size_t n);
#endif

}  // namespace detail

}  // namespace pf::kernels
