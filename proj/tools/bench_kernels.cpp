// Serial-reference versus OpenMP kernel comparison: times both backends on
// GEMM shapes the model actually hits, verifies bit-identical outputs, and
// reports a full training-step comparison.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "mtpslab/kernels.hpp"
#include "mtpslab/model.hpp"
#include "mtpslab/rng.hpp"
#include "mtpslab/synthdata.hpp"
#include "mtpslab/training.hpp"

using namespace mtpslab;

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename T>
void bench_gemm(int64_t m, int64_t k, int64_t n, int iters) {
  Rng rng(1);
  std::vector<T> a(static_cast<size_t>(m * k));
  std::vector<T> b(static_cast<size_t>(k * n));
  std::vector<T> cs(static_cast<size_t>(m * n)), cp(cs.size());
  for (auto& x : a) x = static_cast<T>(rng.normal());
  for (auto& x : b) x = static_cast<T>(rng.normal());

  kernels::gemm_serial(a.data(), b.data(), cs.data(), m, k, n, false, false,
                       false);
  const double t0 = now_ms();
  for (int i = 0; i < iters; ++i) {
    kernels::gemm_serial(a.data(), b.data(), cs.data(), m, k, n, false, false,
                         false);
  }
  const double serial_ms = (now_ms() - t0) / iters;

  kernels::gemm_parallel(a.data(), b.data(), cp.data(), m, k, n, false, false,
                         false);
  const double t1 = now_ms();
  for (int i = 0; i < iters; ++i) {
    kernels::gemm_parallel(a.data(), b.data(), cp.data(), m, k, n, false,
                           false, false);
  }
  const double parallel_ms = (now_ms() - t1) / iters;

  const bool identical =
      std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(T)) == 0;
  const double gflops = 2.0 * m * k * n / 1e6;
  std::printf(
      "gemm %4lld x %4lld x %4lld %-4s serial %8.3f ms (%6.1f GF/s)  "
      "parallel %8.3f ms (%6.1f GF/s)  speedup %.2fx  bit-identical %s\n",
      static_cast<long long>(m), static_cast<long long>(k),
      static_cast<long long>(n), sizeof(T) == 4 ? "f32" : "f64", serial_ms,
      gflops / serial_ms, parallel_ms, gflops / parallel_ms,
      serial_ms / parallel_ms, identical ? "yes" : "NO");
}

void bench_train_step() {
  ModelConfig cfg;
  cfg.variant = Variant::mtp_vocalnet;
  cfg.n = 5;
  auto model = DecoderModel<float>::init(cfg, 3);
  synth::SynthGrammar grammar;
  Rng rng(9);
  std::vector<synth::CorpusRecord> corpus;
  for (int i = 0; i < 64; ++i) {
    synth::CorpusRecord rec;
    const int len = static_cast<int>(rng.uniform_int(4, 12));
    for (int j = 0; j < len; ++j)
      rec.text.push_back(static_cast<int>(rng.uniform_int(0, 15)));
    rec.speech = synth::expand(grammar, rec.text, rng.next_u64());
    corpus.push_back(rec);
  }
  for (auto exec : {kernels::Exec::serial, kernels::Exec::parallel}) {
    kernels::set_exec_mode(exec);
    auto m = model;  // shared params; steps mutate, so re-init per mode
    m = DecoderModel<float>::init(cfg, 3);
    train::TrainConfig tc;
    tc.total_steps = 20;
    tc.batch_size = 8;
    tc.seed = 11;
    const double t0 = now_ms();
    auto result = train::train(m, corpus, tc);
    const double per_step = (now_ms() - t0) / 20.0;
    std::printf("train step (mtp_vocalnet N=5, batch 8): %s %8.2f ms/step, "
                "final loss %.4f\n",
                exec == kernels::Exec::serial ? "serial  " : "parallel",
                per_step, result.log.back().loss);
  }
  kernels::set_exec_mode(kernels::Exec::parallel);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", kernels::thread_cap());
  bench_gemm<float>(288, 64, 64, 400);
  bench_gemm<float>(288, 64, 256, 200);
  bench_gemm<float>(288, 256, 64, 200);
  bench_gemm<float>(1, 64, 64, 2000);
  bench_gemm<float>(5, 64, 64, 2000);
  bench_gemm<double>(288, 64, 256, 100);
  bench_gemm<float>(2048, 128, 128, 40);
  bench_train_step();
  return 0;
}
