#include "mtpslab/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mtpslab::kernels {

namespace {

std::atomic<Exec> g_exec{Exec::parallel};
std::atomic<int> g_thread_cap{0};

int detect_thread_cap() {
  int cap = 1;
#ifdef _OPENMP
  cap = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("MTPSLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) cap = std::min(cap, v);
  }
  return cap;
}

// One matrix-row of C, fixed accumulation order in k for every (ta, tb) case.
// The parallel drivers only split work across calls to these, which is what
// makes serial and parallel results bit-identical.
template <typename T>
inline void gemm_row_nn(const T* a, const T* b, T* crow, int64_t i, int64_t k,
                        int64_t n, bool accumulate) {
  const T* arow = a + i * k;
  if (!accumulate) {
    for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
  }
  for (int64_t p = 0; p < k; ++p) {
    const T av = arow[p];
    const T* brow = b + p * n;
#pragma omp simd
    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

template <typename T>
inline void gemm_row_nt(const T* a, const T* b, T* crow, int64_t i, int64_t k,
                        int64_t n, bool accumulate) {
  const T* arow = a + i * k;
  for (int64_t j = 0; j < n; ++j) {
    const T* brow = b + j * k;
    T acc = T(0);
#pragma omp simd reduction(+ : acc)
    for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    crow[j] = accumulate ? crow[j] + acc : acc;
  }
}

template <typename T>
inline void gemm_row_tn(const T* a, const T* b, T* crow, int64_t i, int64_t m,
                        int64_t k, int64_t n, bool accumulate) {
  if (!accumulate) {
    for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
  }
  for (int64_t p = 0; p < k; ++p) {
    const T av = a[p * m + i];
    const T* brow = b + p * n;
#pragma omp simd
    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

// TN over a row range, p-outer: streams A and B rows contiguously and keeps
// the C block hot. Per-element accumulation order (increasing p) matches
// gemm_row_tn exactly, so serial/parallel/blocked all agree bitwise.
template <typename T>
inline void gemm_tn_block(const T* a, const T* b, T* c, int64_t i0, int64_t i1,
                          int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (!accumulate) {
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
    }
  }
  for (int64_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (int64_t i = i0; i < i1; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
#pragma omp simd
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
inline void gemm_row_tt(const T* a, const T* b, T* crow, int64_t i, int64_t m,
                        int64_t k, int64_t n, bool accumulate) {
  for (int64_t j = 0; j < n; ++j) {
    T acc = T(0);
    for (int64_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
    crow[j] = accumulate ? crow[j] + acc : acc;
  }
}

template <typename T>
inline void gemm_row(const T* a, const T* b, T* c, int64_t i, int64_t m,
                     int64_t k, int64_t n, bool ta, bool tb, bool accumulate) {
  T* crow = c + i * n;
  if (!ta && !tb) {
    gemm_row_nn(a, b, crow, i, k, n, accumulate);
  } else if (!ta && tb) {
    gemm_row_nt(a, b, crow, i, k, n, accumulate);
  } else if (ta && !tb) {
    gemm_row_tn(a, b, crow, i, m, k, n, accumulate);
  } else {
    gemm_row_tt(a, b, crow, i, m, k, n, accumulate);
  }
}

// Below this many multiply-adds a thread team costs more than it saves.
constexpr int64_t kParallelFlopFloor = 64 * 1024;

}  // namespace

Exec exec_mode() { return g_exec.load(std::memory_order_relaxed); }

void set_exec_mode(Exec mode) { g_exec.store(mode, std::memory_order_relaxed); }

int thread_cap() {
  int cap = g_thread_cap.load(std::memory_order_relaxed);
  if (cap == 0) {
    cap = detect_thread_cap();
    g_thread_cap.store(cap, std::memory_order_relaxed);
  }
  return cap;
}

void set_thread_cap(int n) {
  g_thread_cap.store(std::max(1, n), std::memory_order_relaxed);
}

template <typename T>
void gemm_serial(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
                 bool ta, bool tb, bool accumulate) {
  if (ta && !tb) {
    gemm_tn_block(a, b, c, 0, m, m, k, n, accumulate);
    return;
  }
  for (int64_t i = 0; i < m; ++i) gemm_row(a, b, c, i, m, k, n, ta, tb, accumulate);
}

template <typename T>
void gemm_parallel(const T* a, const T* b, T* c, int64_t m, int64_t k,
                   int64_t n, bool ta, bool tb, bool accumulate) {
#ifdef _OPENMP
  const int nt = thread_cap();
  if (ta && !tb) {
#pragma omp parallel num_threads(nt)
    {
      const int tid = omp_get_thread_num();
      const int team = omp_get_num_threads();
      const int64_t chunk = (m + team - 1) / team;
      const int64_t i0 = std::min<int64_t>(m, tid * chunk);
      const int64_t i1 = std::min<int64_t>(m, i0 + chunk);
      if (i0 < i1) gemm_tn_block(a, b, c, i0, i1, m, k, n, accumulate);
    }
    return;
  }
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int64_t i = 0; i < m; ++i) gemm_row(a, b, c, i, m, k, n, ta, tb, accumulate);
#else
  gemm_serial(a, b, c, m, k, n, ta, tb, accumulate);
#endif
}

template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
          bool ta, bool tb, bool accumulate) {
  if (exec_mode() == Exec::parallel && m > 1 && m * k * n >= kParallelFlopFloor &&
      thread_cap() > 1) {
    gemm_parallel(a, b, c, m, k, n, ta, tb, accumulate);
  } else {
    gemm_serial(a, b, c, m, k, n, ta, tb, accumulate);
  }
}

template <typename T>
void gemm_batched(const T* a, const T* b, T* c, int64_t nb, int64_t m,
                  int64_t k, int64_t n, bool ta, bool tb, bool accumulate) {
  const int64_t sa = m * k;
  const int64_t sb = k * n;
  const int64_t sc = m * n;
  if (nb == 1) {
    gemm(a, b, c, m, k, n, ta, tb, accumulate);
    return;
  }
#ifdef _OPENMP
  if (exec_mode() == Exec::parallel && thread_cap() > 1 &&
      nb * m * k * n >= kParallelFlopFloor) {
    const int nt = thread_cap();
    // One thread per batch entry: each matrix is produced by the same serial
    // kernel regardless of the team size.
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int64_t bidx = 0; bidx < nb; ++bidx) {
      gemm_serial(a + bidx * sa, b + bidx * sb, c + bidx * sc, m, k, n, ta,
                  tb, accumulate);
    }
    return;
  }
#endif
  for (int64_t bidx = 0; bidx < nb; ++bidx) {
    gemm_serial(a + bidx * sa, b + bidx * sb, c + bidx * sc, m, k, n, ta, tb,
                accumulate);
  }
}

void parallel_for(int64_t n, int64_t grain,
                  const std::function<void(int64_t)>& fn) {
#ifdef _OPENMP
  if (exec_mode() == Exec::parallel && n >= grain && thread_cap() > 1) {
    const int nt = thread_cap();
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#endif
  for (int64_t i = 0; i < n; ++i) fn(i);
}

#define MTPSLAB_INSTANTIATE(T)                                                 \
  template void gemm_serial<T>(const T*, const T*, T*, int64_t, int64_t,       \
                               int64_t, bool, bool, bool);                     \
  template void gemm_parallel<T>(const T*, const T*, T*, int64_t, int64_t,     \
                                 int64_t, bool, bool, bool);                   \
  template void gemm<T>(const T*, const T*, T*, int64_t, int64_t, int64_t,     \
                        bool, bool, bool);                                     \
  template void gemm_batched<T>(const T*, const T*, T*, int64_t, int64_t,      \
                                int64_t, int64_t, bool, bool, bool);

MTPSLAB_INSTANTIATE(float)
MTPSLAB_INSTANTIATE(double)
#undef MTPSLAB_INSTANTIATE

}  // namespace mtpslab::kernels
