#pragma once

// Dense contraction kernels. Two implementations share one contract:
//   C[m,n] (+)= op(A)[m,k] * op(B)[k,n]
// with op(X) = X or X^T and double accumulation over k in increasing order.
// Because every output element is reduced in the same order, the OpenMP kernel
// is bitwise identical to the serial reference.

namespace imnav::nc::kernels {

template <typename T>
struct GemmArgs {
    const T* a;
    const T* b;
    T* c;
    int m;
    int k;
    int n;
    bool trans_a = false;  // a stored as k x m
    bool trans_b = false;  // b stored as n x k
    bool accumulate = false;
};

// Row-parallel kernel; runs on one thread below the work threshold.
template <typename T>
void gemm(const GemmArgs<T>& args);

// Minimum m*n*k before the parallel region is entered.
inline constexpr long kParallelThreshold = 1L << 15;

namespace serial {
// Naive triple loop; kept as the test oracle and benchmark baseline.
template <typename T>
void gemm(const GemmArgs<T>& args);
}  // namespace serial

int max_threads();

}  // namespace imnav::nc::kernels
