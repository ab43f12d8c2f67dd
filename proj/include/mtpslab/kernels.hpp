#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace mtpslab::kernels {

/// Execution backend for the hot loops. `parallel` distributes independent
/// output rows (or batch entries) across OpenMP threads; every output element
/// is still accumulated by a single thread in a fixed k-order, so results are
/// bit-identical to `serial` regardless of thread count.
enum class Exec { serial, parallel };

Exec exec_mode();
void set_exec_mode(Exec mode);

/// Worker cap: min(OpenMP default, MTPSLAB_THREADS if set). Applied once at
/// first use; `set_thread_cap` overrides it (used by benchmarks to pin 1).
int thread_cap();
void set_thread_cap(int n);

/// C[m x n] = A op B, row-major. ta/tb transpose the logical operands:
/// A is m x k (or k x m when ta), B is k x n (or n x k when tb).
/// accumulate=false overwrites C, true adds into it.
template <typename T>
void gemm_serial(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
                 bool ta, bool tb, bool accumulate);

template <typename T>
void gemm_parallel(const T* a, const T* b, T* c, int64_t m, int64_t k,
                   int64_t n, bool ta, bool tb, bool accumulate);

/// Dispatches on exec_mode(), with a size floor below which serial is always
/// used (thread launch costs more than tiny matrices).
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
          bool ta, bool tb, bool accumulate);

/// nb independent GEMMs with contiguous strides (a: nb*m*k, b: nb*k*n,
/// c: nb*m*n). Parallel version splits over (batch, row) pairs.
template <typename T>
void gemm_batched(const T* a, const T* b, T* c, int64_t nb, int64_t m,
                  int64_t k, int64_t n, bool ta, bool tb, bool accumulate);

/// Runs fn(i) for i in [0, n). Parallelized only when the backend is parallel
/// and the trip count clears `grain`; iterations must be independent.
void parallel_for(int64_t n, int64_t grain,
                  const std::function<void(int64_t)>& fn);

}  // namespace mtpslab::kernels
