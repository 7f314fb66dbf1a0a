#pragma once

#include <cstdint>

// Dense numeric kernels behind the tensor layer.
//
// Each kernel exists twice: a serial reference under kernels::serial and an
// OpenMP version under kernels::par. The parallel versions assign every
// output element to exactly one thread and keep the inner accumulation loop
// in the same order as the reference, so the two produce bit-identical
// results for any thread count. The unprefixed entry points dispatch to the
// parallel version when it is enabled and the problem is large enough.
//
// Gradient kernels accumulate (+=) into their destination; forward kernels
// overwrite unless `acc` is set.

namespace qdyn::kernels {

void set_parallel(bool on);
bool parallel_enabled();
int max_threads();
void set_threads(int n); // no-op without OpenMP or when n < 1

namespace serial {

// c(m,n) = a(m,k) * b(k,n)
void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n, bool acc = false);
// c(m,n) = a(m,k) * b(n,k)^T
void matmul_nt(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc = false);
// c(m,n) = a(k,m)^T * b(k,n)
void matmul_tn(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc = false);

// x (b,cin,len), w (cout,cin,kernel), bias (cout) or null, y (b,cout,len).
// Causal: y[..,t] depends on x[..,t'] with t' <= t only (left zero padding).
void conv1d_causal(const double* x, const double* w, const double* bias, double* y,
                   int64_t b, int64_t cin, int64_t cout, int64_t len,
                   int64_t kernel, int64_t dilation);
void conv1d_causal_grad_x(const double* g, const double* w, double* dx,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation);
void conv1d_causal_grad_w(const double* g, const double* x, double* dw,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation);
void conv1d_causal_grad_bias(const double* g, double* dbias,
                             int64_t b, int64_t cout, int64_t len);

// out(n) += sum over rows of g(m,n)
void colsum_acc(const double* g, double* out, int64_t m, int64_t n);

} // namespace serial

namespace par {

void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n, bool acc = false);
void matmul_nt(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc = false);
void matmul_tn(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc = false);
void conv1d_causal(const double* x, const double* w, const double* bias, double* y,
                   int64_t b, int64_t cin, int64_t cout, int64_t len,
                   int64_t kernel, int64_t dilation);
void conv1d_causal_grad_x(const double* g, const double* w, double* dx,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation);
void conv1d_causal_grad_w(const double* g, const double* x, double* dw,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation);
void conv1d_causal_grad_bias(const double* g, double* dbias,
                             int64_t b, int64_t cout, int64_t len);
void colsum_acc(const double* g, double* out, int64_t m, int64_t n);

} // namespace par

// Dispatching entry points.
void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n, bool acc = false);
void matmul_nt(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc = false);
void matmul_tn(const double* a, const double* b, double* c,
               int64_t m, int64_t k, int64_t n, bool acc = false);
void conv1d_causal(const double* x, const double* w, const double* bias, double* y,
                   int64_t b, int64_t cin, int64_t cout, int64_t len,
                   int64_t kernel, int64_t dilation);
void conv1d_causal_grad_x(const double* g, const double* w, double* dx,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation);
void conv1d_causal_grad_w(const double* g, const double* x, double* dw,
                          int64_t b, int64_t cin, int64_t cout, int64_t len,
                          int64_t kernel, int64_t dilation);
void conv1d_causal_grad_bias(const double* g, double* dbias,
                             int64_t b, int64_t cout, int64_t len);
void colsum_acc(const double* g, double* out, int64_t m, int64_t n);

} // namespace qdyn::kernels
