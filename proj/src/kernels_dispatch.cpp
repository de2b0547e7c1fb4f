#include "pf/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace pf::kernels {

namespace {

struct Table {
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    double (*max)(const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*add)(double*, const double*, std::size_t);
    void (*scale)(double*, double, std::size_t);
};

constexpr Table kScalar{detail::dot_scalar, detail::sum_scalar, detail::max_scalar,
                        detail::axpy_scalar, detail::add_scalar, detail::scale_scalar};

#ifdef PF_HAVE_AVX2
constexpr Table kAvx2{detail::dot_avx2, detail::sum_avx2, detail::max_avx2,
                      detail::axpy_avx2, detail::add_avx2, detail::scale_avx2};
#endif

Backend g_backend = Backend::Scalar;
const Table* g_table = &kScalar;

void apply(Backend b) {
    g_backend = b;
    g_table = &kScalar;
#ifdef PF_HAVE_AVX2
    if (b == Backend::Avx2) g_table = &kAvx2;
#endif
}

Backend probe() {
#ifdef PF_HAVE_AVX2
    if (__builtin_cpu_supports("avx2")) return Backend::Avx2;
#endif
    return Backend::Scalar;
}

// First-use initialization is a magic static, so concurrent sessions can
// start safely. set_backend itself is startup-time configuration and is
// not synchronized against in-flight kernel calls.
void init_once() {
    static const bool initialized = [] {
        Backend b = probe();
        if (const char* env = std::getenv("PULSEFOCUS_KERNELS")) {
            if (std::strcmp(env, "scalar") == 0) b = Backend::Scalar;
            else if (std::strcmp(env, "avx2") == 0 && avx2_available()) b = Backend::Avx2;
            // anything else (including "auto") keeps the probe result
        }
        apply(b);
        return true;
    }();
    (void)initialized;
}

}  // namespace

bool avx2_available() {
#ifdef PF_HAVE_AVX2
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

Backend active_backend() {
    init_once();
    return g_backend;
}

void set_backend(Backend b) {
    init_once();
    if (b == Backend::Avx2 && !avx2_available())
        throw std::invalid_argument("kernels: avx2 backend not available on this CPU/build");
    apply(b);
}

void set_backend(const char* name) {
    std::string s = name ? name : "";
    if (s == "scalar") set_backend(Backend::Scalar);
    else if (s == "avx2") set_backend(Backend::Avx2);
    else if (s == "auto") { init_once(); apply(probe()); }
    else throw std::invalid_argument("kernels: unknown backend '" + s + "'");
}

const char* backend_name(Backend b) {
    return b == Backend::Avx2 ? "avx2" : "scalar";
}

double dot(const double* a, const double* b, std::size_t n) {
    init_once();
    return g_table->dot(a, b, n);
}

double sum(const double* x, std::size_t n) {
    init_once();
    return g_table->sum(x, n);
}

double max(const double* x, std::size_t n) {
    init_once();
    return g_table->max(x, n);
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    init_once();
    g_table->axpy(a, x, y, n);
}

void add(double* y, const double* x, std::size_t n) {
    init_once();
    g_table->add(y, x, n);
}

void scale(double* x, double s, std::size_t n) {
    init_once();
    g_table->scale(x, s, n);
}

void softmax(double* x, std::size_t n) {
    if (n == 0) return;
    init_once();
    const double m = g_table->max(x, n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(x[i] - m);
    const double z = g_table->sum(x, n);
    g_table->scale(x, 1.0 / z, n);
}

}  // namespace pf::kernels
