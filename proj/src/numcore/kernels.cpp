#include "imnav/numcore/kernels.hpp"

#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace imnav::nc::kernels {

namespace {

template <typename T>
inline T a_at(const GemmArgs<T>& g, int i, int p) {
    return g.trans_a ? g.a[static_cast<long>(p) * g.m + i] : g.a[static_cast<long>(i) * g.k + p];
}

template <typename T>
inline T b_at(const GemmArgs<T>& g, int p, int j) {
    return g.trans_b ? g.b[static_cast<long>(j) * g.k + p] : g.b[static_cast<long>(p) * g.n + j];
}

// AVX2 without FMA: wider lanes, the same roundings as the default build.
template <typename T>
__attribute__((target_clones("avx2", "default"))) void gemm_row(const GemmArgs<T>& g, int i, std::vector<double>& acc) {
    acc.assign(g.n, 0.0);
    // Each acc[j] is summed over p in increasing order in both branches.
    if (!g.trans_b) {
        for (int p = 0; p < g.k; ++p) {
            const double av = a_at(g, i, p);
            const T* brow = g.b + static_cast<long>(p) * g.n;
            for (int j = 0; j < g.n; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
    } else {
        for (int p = 0; p < g.k; ++p) {
            const double av = a_at(g, i, p);
            const T* bcol = g.b + p;
            for (int j = 0; j < g.n; ++j) acc[j] += av * static_cast<double>(bcol[static_cast<long>(j) * g.k]);
        }
    }
    T* crow = g.c + static_cast<long>(i) * g.n;
    if (g.accumulate) {
        for (int j = 0; j < g.n; ++j) crow[j] += static_cast<T>(acc[j]);
    } else {
        for (int j = 0; j < g.n; ++j) crow[j] = static_cast<T>(acc[j]);
    }
}

}  // namespace

template <typename T>
void gemm(const GemmArgs<T>& g) {
    const long work = static_cast<long>(g.m) * g.n * g.k;
    if (work < kParallelThreshold) {
        thread_local std::vector<double> acc;
        if (g.trans_b && g.m > 1) {
            // Row-major copy of B so the inner loop runs over contiguous memory.
            thread_local std::vector<T> bt;
            bt.resize(static_cast<std::size_t>(g.k) * g.n);
            for (int j = 0; j < g.n; ++j)
                for (int p = 0; p < g.k; ++p) bt[static_cast<std::size_t>(p) * g.n + j] = g.b[static_cast<long>(j) * g.k + p];
            GemmArgs<T> h = g;
            h.b = bt.data();
            h.trans_b = false;
            for (int i = 0; i < h.m; ++i) gemm_row(h, i, acc);
            return;
        }
        for (int i = 0; i < g.m; ++i) gemm_row(g, i, acc);
        return;
    }
#pragma omp parallel
    {
        std::vector<double> acc;
#pragma omp for schedule(static)
        for (int i = 0; i < g.m; ++i) gemm_row(g, i, acc);
    }
}

namespace serial {

template <typename T>
void gemm(const GemmArgs<T>& g) {
    for (int i = 0; i < g.m; ++i) {
        for (int j = 0; j < g.n; ++j) {
            double s = 0.0;
            for (int p = 0; p < g.k; ++p) s += static_cast<double>(a_at(g, i, p)) * static_cast<double>(b_at(g, p, j));
            T& out = g.c[static_cast<long>(i) * g.n + j];
            out = g.accumulate ? out + static_cast<T>(s) : static_cast<T>(s);
        }
    }
}

template void gemm<float>(const GemmArgs<float>&);
template void gemm<double>(const GemmArgs<double>&);

}  // namespace serial

template void gemm<float>(const GemmArgs<float>&);
template void gemm<double>(const GemmArgs<double>&);

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace imnav::nc::kernels
