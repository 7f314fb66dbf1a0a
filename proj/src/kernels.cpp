#include "qdyn/kernels.hpp"

#include <atomic>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qdyn::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Work below this many multiply-adds is not worth a parallel region.
constexpr int64_t kGrain = 16 * 1024;

bool use_par(int64_t work, int64_t outer) {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed) && outer >= 2 && work >= kGrain;
#else
    (void)work;
    (void)outer;
    return false;
#endif
}

// Per-output-row bodies shared by the serial and parallel versions. Keeping
// one body per kernel guarantees identical rounding on both paths.

inline void matmul_row(const double* a, const double* b, double* c,
                       int64_t i, int64_t k, int64_t n, bool acc) {
    double* crow = c + i * n;
    if (!acc) {
        for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
        const double aik = arow[kk];
        const double* brow = b + kk * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
}

inline void matmul_nt_row(const double* a, const double* b, double* c,
                          int64_t i, int64_t k, int64_t n, bool acc) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double sum = 0.0;
        for (int64_t kk = 0; kk < k; ++kk) sum += arow[kk] * brow[kk];
        crow[j] = acc ? crow[j] + sum : sum;
    }
}

inline void matmul_tn_row(const double* a, const double* b, double* c,
                          int64_t i, int64_t m, int64_t k, int64_t n, bool acc) {
    double* crow = c + i * n;
    if (!acc) {
        for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    for (int64_t kk = 0; kk < k; ++kk) {
        const double aki = a[kk * m + i];
        const double* brow = b + kk * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
}

// One (batch, out-channel) plane of the causal convolution.
inline void conv_plane(const double* x, const double* w, const double* bias, double* y,
                       int64_t bi, int64_t oc, int64_t cin, int64_t cout,
                       int64_t len, int64_t kernel, int64_t dilation) {
    double* yrow = y + (bi * cout + oc) * len;
    const double init = bias ? bias[oc] : 0.0;
    for (int64_t t = 0; t < len; ++t) yrow[t] = init;
    for (int64_t ic = 0; ic < cin; ++ic) {
        const double* xrow = x + (bi * cin + ic) * len;
        const double* wrow = w + (oc * cin + ic) * kernel;
        for (int64_t tap = 0; tap < kernel; ++tap) {
            const double wv = wrow[tap];
            const int64_t shift = dilation * (kernel - 1 - tap);
            for (int64_t t = shift; t < len; ++t) yrow[t] += wv * xrow[t - shift];
        }
    }
}

inline void conv_grad_x_plane(const double* g, const double* w, double* dx,
                              int64_t bi, int64_t ic, int64_t cin, int64_t cout,
                              int64_t len, int64_t kernel, int64_t dilation) {
    double* drow = dx + (bi * cin + ic) * len;
    for (int64_t oc = 0; oc < cout; ++oc) {
        const double* grow = g + (bi * cout + oc) * len;
        const double* wrow = w + (oc * cin + ic) * kernel;
        for (int64_t tap = 0; tap < kernel; ++tap) {
            const double wv = wrow[tap];
            const int64_t shift = dilation * (kernel - 1 - tap);
            for (int64_t t = shift; t < len; ++t) drow[t - shift] += wv * grow[t];
        }
    }
}

inline void conv_grad_w_plane(const double* g, const double* x, double* dw,
                              int64_t oc, int64_t ic, int64_t b, int64_t cin,
                              int64_t cout, int64_t len, int64_t kernel,
                              int64_t dilation) {
    double* wrow = dw + (oc * cin + ic) * kernel;
    for (int64_t tap = 0; tap < kernel; ++tap) {
        const int64_t shift = dilation * (kernel - 1 - tap);
        double sum = 0.0;
        for (int64_t bi = 0; bi < b; ++bi) {
            const double* grow = g + (bi * cout + oc) * len;
            const double* xrow = x + (bi * cin + ic) * len;
            for (int64_t t = shift; t < len; ++t) sum += grow[t] * xrow[t - shift];
        }
        wrow[tap] += sum;
    }
}

inline void conv_grad_bias_one(const double* g, double* dbias,
                               int64_t oc, int64_t b, int64_t cout, int64_t len) {
    double sum = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) {
        const double* grow = g + (bi * cout + oc) * len;
        for (int64_t t = 0; t < len; ++t) sum += grow[t];
    }
    dbias[oc] += sum;
}

inline void colsum_one(const double* g, double* out, int64_t j, int64_t m, int64_t n) {
    double sum = 0.0;
    for (int64_t i = 0; i < m; ++i) sum += g[i * n + j];
    out[j] += sum;
}

} // namespace

void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

bool parallel_enabled() {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed);
#else
    return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
    if (n >= 1) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

namespace serial {

void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n, acc);
}

void matmul_nt(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n, acc);
}

void matmul_tn(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, m, k, n, acc);
}

void conv1d_causal(const double* x, const double* w, const double* bias, double* y,
                   int64_t b, int64_t cin, int64_t cout, int64_t len,
                   int64_t kernel, int64_t dilation) {
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t oc = 0; oc < cout; ++oc)
            conv_plane(x, w, bias, y, bi, oc, cin, cout, len, kernel, dilation);
}

void conv1d_causal_grad_x(const double* g, const double* w, double* dx,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation) {
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ic = 0; ic < cin; ++ic)
            conv_grad_x_plane(g, w, dx, bi, ic, cin, cout, len, kernel, dilation);
}

void conv1d_causal_grad_w(const double* g, const double* x, double* dw,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation) {
    for (int64_t oc = 0; oc < cout; ++oc)
        for (int64_t ic = 0; ic < cin; ++ic)
            conv_grad_w_plane(g, x, dw, oc, ic, b, cin, cout, len, kernel, dilation);
}

void conv1d_causal_grad_bias(const double* g, double* dbias,
                             int64_t b, int64_t cout, int64_t len) {
    for (int64_t oc = 0; oc < cout; ++oc) conv_grad_bias_one(g, dbias, oc, b, cout, len);
}

void colsum_acc(const double* g, double* out, int64_t m, int64_t n) {
    for (int64_t j = 0; j < n; ++j) colsum_one(g, out, j, m, n);
}

} // namespace serial

namespace par {

void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n, acc);
}

void matmul_nt(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n, acc);
}

void matmul_tn(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, m, k, n, acc);
}

void conv1d_causal(const double* x, const double* w, const double* bias, double* y,
                   int64_t b, int64_t cin, int64_t cout, int64_t len,
                   int64_t kernel, int64_t dilation) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t oc = 0; oc < cout; ++oc)
            conv_plane(x, w, bias, y, bi, oc, cin, cout, len, kernel, dilation);
}

void conv1d_causal_grad_x(const double* g, const double* w, double* dx,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ic = 0; ic < cin; ++ic)
            conv_grad_x_plane(g, w, dx, bi, ic, cin, cout, len, kernel, dilation);
}

void conv1d_causal_grad_w(const double* g, const double* x, double* dw,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t oc = 0; oc < cout; ++oc)
        for (int64_t ic = 0; ic < cin; ++ic)
            conv_grad_w_plane(g, x, dw, oc, ic, b, cin, cout, len, kernel, dilation);
}

void conv1d_causal_grad_bias(const double* g, double* dbias,
                             int64_t b, int64_t cout, int64_t len) {
#pragma omp parallel for schedule(static)
    for (int64_t oc = 0; oc < cout; ++oc) conv_grad_bias_one(g, dbias, oc, b, cout, len);
}

void colsum_acc(const double* g, double* out, int64_t m, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < n; ++j) colsum_one(g, out, j, m, n);
}

} // namespace par

void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n, bool acc) {
    if (use_par(m * k * n, m)) par::matmul(a, b, c, m, k, n, acc);
    else serial::matmul(a, b, c, m, k, n, acc);
}

void matmul_nt(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc) {
    if (use_par(m * k * n, m)) par::matmul_nt(a, b, c, m, k, n, acc);
    else serial::matmul_nt(a, b, c, m, k, n, acc);
}

void matmul_tn(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc) {
    if (use_par(m * k * n, m)) par::matmul_tn(a, b, c, m, k, n, acc);
    else serial::matmul_tn(a, b, c, m, k, n, acc);
}

void conv1d_causal(const double* x, const double* w, const double* bias, double* y,
                   int64_t b, int64_t cin, int64_t cout, int64_t len,
                   int64_t kernel, int64_t dilation) {
    if (use_par(b * cin * cout * len * kernel, b * cout))
        par::conv1d_causal(x, w, bias, y, b, cin, cout, len, kernel, dilation);
    else
        serial::conv1d_causal(x, w, bias, y, b, cin, cout, len, kernel, dilation);
}

void conv1d_causal_grad_x(const double* g, const double* w, double* dx,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation) {
    if (use_par(b * cin * cout * len * kernel, b * cin))
        par::conv1d_causal_grad_x(g, w, dx, b, cin, cout, len, kernel, dilation);
    else
        serial::conv1d_causal_grad_x(g, w, dx, b, cin, cout, len, kernel, dilation);
}

void conv1d_causal_grad_w(const double* g, const double* x, double* dw,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation) {
    if (use_par(b * cin * cout * len * kernel, cout * cin))
        par::conv1d_causal_grad_w(g, x, dw, b, cin, cout, len, kernel, dilation);
    else
        serial::conv1d_causal_grad_w(g, x, dw, b, cin, cout, len, kernel, dilation);
}

void conv1d_causal_grad_bias(const double* g, double* dbias,
                             int64_t b, int64_t cout, int64_t len) {
    if (use_par(b * cout * len, cout))
        par::conv1d_causal_grad_bias(g, dbias, b, cout, len);
    else
        serial::conv1d_causal_grad_bias(g, dbias, b, cout, len);
}

void colsum_acc(const double* g, double* out, int64_t m, int64_t n) {
    if (use_par(m * n, n)) par::colsum_acc(g, out, m, n);
    else serial::colsum_acc(g, out, m, n);
}

} // namespace qdyn::kernels
