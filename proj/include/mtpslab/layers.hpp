#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mtpslab/kernels.hpp"
#include "mtpslab/ops.hpp"
#include "mtpslab/rng.hpp"
#include "mtpslab/tensor.hpp"

namespace mtpslab {

/// Registers named parameters in a deterministic order. Each parameter is
/// initialized from its own stream seeded by (seed, name), so two models
/// sharing a seed draw identical values for identically named parameters no
/// matter what else they contain.
template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(uint64_t seed,
               std::vector<std::pair<std::string, Tensor<T>>>* registry)
      : seed_(seed), registry_(registry) {}

  Tensor<T> matrix(const std::string& name, int64_t rows, int64_t cols) {
    Rng rng(Rng::mix(seed_, Rng::hash_str(name)));
    auto t = Tensor<T>::randn({rows, cols}, rng, 0.02);
    return put(name, std::move(t));
  }
  Tensor<T> zeros(const std::string& name, int64_t n) {
    return put(name, Tensor<T>({n}, T(0)));
  }
  Tensor<T> ones(const std::string& name, int64_t n) {
    return put(name, Tensor<T>({n}, T(1)));
  }

 private:
  Tensor<T> put(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    registry_->emplace_back(name, t);
    return registry_->back().second;
  }
  uint64_t seed_;
  std::vector<std::pair<std::string, Tensor<T>>>* registry_;
};

template <typename T>
struct Linear {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out], undefined when biasless

  Tensor<T> forward(const Tensor<T>& x) const {
    auto y = matmul(x, w);
    if (b.defined()) y = add_bias(y, b);
    return y;
  }

  static Linear make(ParamBuilder<T>& pb, const std::string& prefix,
                     int64_t in, int64_t out, bool bias) {
    Linear l;
    l.w = pb.matrix(prefix + ".w", in, out);
    if (bias) l.b = pb.zeros(prefix + ".b", out);
    return l;
  }
};

template <typename T>
struct RmsNormLayer {
  Tensor<T> gain;

  Tensor<T> forward(const Tensor<T>& x) const { return rms_norm(x, gain); }

  static RmsNormLayer make(ParamBuilder<T>& pb, const std::string& prefix,
                           int64_t d) {
    return RmsNormLayer{pb.ones(prefix + ".gain", d)};
  }
};

/// RMS normalization followed by a linear vocabulary projection.
template <typename T>
struct OutHead {
  RmsNormLayer<T> norm;
  Linear<T> proj;

  Tensor<T> forward(const Tensor<T>& x) const {
    return proj.forward(norm.forward(x));
  }

  static OutHead make(ParamBuilder<T>& pb, const std::string& prefix,
                      int64_t d, int64_t out) {
    OutHead h;
    h.norm = RmsNormLayer<T>::make(pb, prefix + ".norm", d);
    h.proj = Linear<T>::make(pb, prefix + ".proj", d, out, /*bias=*/true);
    return h;
  }
};

template <typename T>
struct Attention {
  Linear<T> wq, wk, wv, wo;  // biasless
  int n_heads = 1;

  /// x: [B, L, D]; mask: B*L*L visibility bytes; positions: length L.
  Tensor<T> forward(const Tensor<T>& x, const std::vector<uint8_t>& mask,
                    const std::vector<int>& positions, bool use_rotary) const {
    const int64_t dh = x.dim(2) / n_heads;
    auto q = split_heads(wq.forward(x), n_heads);
    auto k = split_heads(wk.forward(x), n_heads);
    auto v = split_heads(wv.forward(x), n_heads);
    if (use_rotary) {
      q = rotary(q, positions);
      k = rotary(k, positions);
    }
    auto scores = scale(matmul(q, k, false, true),
                        1.0 / std::sqrt(static_cast<double>(dh)));
    auto probs = masked_softmax(scores, mask, n_heads);
    return wo.forward(merge_heads(matmul(probs, v)));
  }

  static Attention make(ParamBuilder<T>& pb, const std::string& prefix,
                        int64_t d, int n_heads) {
    Attention a;
    a.n_heads = n_heads;
    a.wq = Linear<T>::make(pb, prefix + ".wq", d, d, false);
    a.wk = Linear<T>::make(pb, prefix + ".wk", d, d, false);
    a.wv = Linear<T>::make(pb, prefix + ".wv", d, d, false);
    a.wo = Linear<T>::make(pb, prefix + ".wo", d, d, false);
    return a;
  }
};

template <typename T>
struct Mlp {
  Linear<T> gate, up, down;

  Tensor<T> forward(const Tensor<T>& x) const {
    return down.forward(mul(silu(gate.forward(x)), up.forward(x)));
  }

  static Mlp make(ParamBuilder<T>& pb, const std::string& prefix, int64_t d,
                  int64_t d_ff) {
    Mlp m;
    m.gate = Linear<T>::make(pb, prefix + ".gate", d, d_ff, false);
    m.up = Linear<T>::make(pb, prefix + ".up", d, d_ff, false);
    m.down = Linear<T>::make(pb, prefix + ".down", d_ff, d, false);
    return m;
  }
};

// ---------------------------------------------------------------------------
// incremental attention state (inference path)
// ---------------------------------------------------------------------------

/// Per-layer key/value cache, head-major: k[h * cap * dh + pos * dh + j].
template <typename T>
struct LayerCache {
  int n_heads = 0;
  int d_head = 0;
  int len = 0;
  int cap = 0;
  std::vector<T> k, v;

  void reset(int n_heads_, int d_head_, int capacity) {
    n_heads = n_heads_;
    d_head = d_head_;
    len = 0;
    cap = capacity;
    k.assign(static_cast<size_t>(n_heads) * cap * d_head, T(0));
    v.assign(static_cast<size_t>(n_heads) * cap * d_head, T(0));
  }

  void grow(int new_cap) {
    if (new_cap <= cap) return;
    std::vector<T> nk(static_cast<size_t>(n_heads) * new_cap * d_head, T(0));
    std::vector<T> nv(nk.size());
    for (int h = 0; h < n_heads; ++h) {
      std::copy(k.begin() + static_cast<size_t>(h) * cap * d_head,
                k.begin() + static_cast<size_t>(h) * cap * d_head +
                    static_cast<size_t>(len) * d_head,
                nk.begin() + static_cast<size_t>(h) * new_cap * d_head);
      std::copy(v.begin() + static_cast<size_t>(h) * cap * d_head,
                v.begin() + static_cast<size_t>(h) * cap * d_head +
                    static_cast<size_t>(len) * d_head,
                nv.begin() + static_cast<size_t>(h) * new_cap * d_head);
    }
    k.swap(nk);
    v.swap(nv);
    cap = new_cap;
  }

  T* k_at(int h, int pos) {
    return k.data() + (static_cast<size_t>(h) * cap + pos) * d_head;
  }
  T* v_at(int h, int pos) {
    return v.data() + (static_cast<size_t>(h) * cap + pos) * d_head;
  }
  const T* k_at(int h, int pos) const {
    return k.data() + (static_cast<size_t>(h) * cap + pos) * d_head;
  }
  const T* v_at(int h, int pos) const {
    return v.data() + (static_cast<size_t>(h) * cap + pos) * d_head;
  }
};

/// Visible columns of one query row: up to two half-open ranges of global
/// position indices (text-prefix range plus causal tail range).
struct Visibility {
  int r0_begin = 0, r0_end = 0;
  int r1_begin = 0, r1_end = 0;

  static Visibility prefix(int end) { return {0, end, 0, 0}; }
  static Visibility split(int text_end, int tail_begin, int tail_end) {
    return {0, text_end, tail_begin, tail_end};
  }
  int count() const { return (r0_end - r0_begin) + (r1_end - r1_begin); }
};

template <typename T>
struct InferWorkspace {
  std::vector<T> normed, q, k, v, ctx, attn, act_gate, act_up, act, mlp_out;
  std::vector<double> scores;
};

namespace detail {

template <typename T>
inline void rms_rows(const T* x, const T* gain, T* out, int64_t rows,
                     int64_t d) {
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = x + r * d;
    T* po = out + r * d;
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j)
      ss += static_cast<double>(px[j]) * static_cast<double>(px[j]);
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + kRmsNormEps);
    for (int64_t j = 0; j < d; ++j)
      po[j] = static_cast<T>(static_cast<double>(gain[j]) *
                             static_cast<double>(px[j]) * inv);
  }
}

template <typename T>
inline void rotary_rows(T* x, const int* positions, int64_t rows, int n_heads,
                        int64_t dh, double base = 10000.0) {
  const int64_t half = dh / 2;
  std::vector<double> cs(static_cast<size_t>(half)), sn(static_cast<size_t>(half));
  for (int64_t r = 0; r < rows; ++r) {
    const double pos = static_cast<double>(positions[r]);
    for (int64_t i = 0; i < half; ++i) {
      const double ang = pos * std::pow(base, -2.0 * static_cast<double>(i) /
                                                  static_cast<double>(dh));
      cs[static_cast<size_t>(i)] = std::cos(ang);
      sn[static_cast<size_t>(i)] = std::sin(ang);
    }
    for (int h = 0; h < n_heads; ++h) {
      T* row = x + (r * n_heads + h) * dh;
      for (int64_t i = 0; i < half; ++i) {
        const double x0 = static_cast<double>(row[2 * i]);
        const double x1 = static_cast<double>(row[2 * i + 1]);
        row[2 * i] = static_cast<T>(x0 * cs[static_cast<size_t>(i)] -
                                    x1 * sn[static_cast<size_t>(i)]);
        row[2 * i + 1] = static_cast<T>(x0 * sn[static_cast<size_t>(i)] +
                                        x1 * cs[static_cast<size_t>(i)]);
      }
    }
  }
}

}  // namespace detail

template <typename T>
struct DecoderLayer {
  RmsNormLayer<T> ln1, ln2;
  Attention<T> attn;
  Mlp<T> mlp;

  Tensor<T> forward(const Tensor<T>& x, const std::vector<uint8_t>& mask,
                    const std::vector<int>& positions, bool use_rotary) const {
    auto h = add(x, attn.forward(ln1.forward(x), mask, positions, use_rotary));
    return add(h, mlp.forward(ln2.forward(h)));
  }

  static DecoderLayer make(ParamBuilder<T>& pb, const std::string& prefix,
                           int64_t d, int n_heads, int64_t d_ff) {
    DecoderLayer l;
    l.ln1 = RmsNormLayer<T>::make(pb, prefix + ".ln1", d);
    l.ln2 = RmsNormLayer<T>::make(pb, prefix + ".ln2", d);
    l.attn = Attention<T>::make(pb, prefix + ".attn", d, n_heads);
    l.mlp = Mlp<T>::make(pb, prefix + ".mlp", d, d_ff);
    return l;
  }

  /// Incremental forward over `rows` new positions. x ([rows, d], row-major)
  /// is transformed in place; cache gains the rows' keys/values. vis[i] lists
  /// the columns row i may attend to (global indices; must include itself =
  /// cache.len + i and nothing beyond it). Arithmetic matches the batched
  /// forward path op for op.
  void extend(LayerCache<T>& cache, T* x, int rows, const int* positions,
              const Visibility* vis, bool use_rotary,
              InferWorkspace<T>& ws) const {
    const int H = attn.n_heads;
    const int64_t d = ln1.gain.numel();
    const int64_t dh = d / H;
    const int64_t dff = mlp.gate.w.dim(1);
    const size_t nd = static_cast<size_t>(rows) * d;
    if (cache.len + rows > cache.cap) {
      cache.grow(std::max(cache.len + rows, cache.cap * 2 + 8));
    }

    ws.normed.resize(nd);
    ws.q.resize(nd);
    ws.k.resize(nd);
    ws.v.resize(nd);
    ws.ctx.resize(nd);
    ws.attn.resize(nd);
    detail::rms_rows(x, ln1.gain.ptr(), ws.normed.data(), rows, d);
    kernels::gemm(ws.normed.data(), attn.wq.w.ptr(), ws.q.data(), rows, d, d,
                  false, false, false);
    kernels::gemm(ws.normed.data(), attn.wk.w.ptr(), ws.k.data(), rows, d, d,
                  false, false, false);
    kernels::gemm(ws.normed.data(), attn.wv.w.ptr(), ws.v.data(), rows, d, d,
                  false, false, false);
    if (use_rotary) {
      detail::rotary_rows(ws.q.data(), positions, rows, H, dh);
      detail::rotary_rows(ws.k.data(), positions, rows, H, dh);
    }
    const int base = cache.len;
    for (int i = 0; i < rows; ++i) {
      for (int h = 0; h < H; ++h) {
        std::copy(ws.k.data() + (static_cast<int64_t>(i) * H + h) * dh,
                  ws.k.data() + (static_cast<int64_t>(i) * H + h + 1) * dh,
                  cache.k_at(h, base + i));
        std::copy(ws.v.data() + (static_cast<int64_t>(i) * H + h) * dh,
                  ws.v.data() + (static_cast<int64_t>(i) * H + h + 1) * dh,
                  cache.v_at(h, base + i));
      }
    }
    cache.len += rows;

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int i = 0; i < rows; ++i) {
      const Visibility& vr = vis[i];
      const int n_vis = vr.count();
      ws.scores.resize(static_cast<size_t>(n_vis));
      for (int h = 0; h < H; ++h) {
        const T* qrow = ws.q.data() + (static_cast<int64_t>(i) * H + h) * dh;
        int idx = 0;
        auto score_range = [&](int b, int e) {
          for (int c = b; c < e; ++c) {
            const T* krow = cache.k_at(h, c);
            T acc = T(0);
            for (int64_t j = 0; j < dh; ++j) acc += qrow[j] * krow[j];
            // T-precision scale to mirror the batched path's scale op.
            ws.scores[static_cast<size_t>(idx++)] =
                static_cast<double>(acc * static_cast<T>(inv_sqrt));
          }
        };
        score_range(vr.r0_begin, vr.r0_end);
        score_range(vr.r1_begin, vr.r1_end);
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < n_vis; ++c)
          mx = std::max(mx, ws.scores[static_cast<size_t>(c)]);
        double z = 0.0;
        for (int c = 0; c < n_vis; ++c) {
          const double e = std::exp(ws.scores[static_cast<size_t>(c)] - mx);
          ws.scores[static_cast<size_t>(c)] = e;
          z += e;
        }
        const double invz = 1.0 / z;
        T* crow = ws.ctx.data() + (static_cast<int64_t>(i) * H + h) * dh;
        for (int64_t j = 0; j < dh; ++j) crow[j] = T(0);
        idx = 0;
        auto blend_range = [&](int b, int e) {
          for (int c = b; c < e; ++c) {
            const T p =
                static_cast<T>(ws.scores[static_cast<size_t>(idx++)] * invz);
            const T* vrow = cache.v_at(h, c);
            for (int64_t j = 0; j < dh; ++j) crow[j] += p * vrow[j];
          }
        };
        blend_range(vr.r0_begin, vr.r0_end);
        blend_range(vr.r1_begin, vr.r1_end);
      }
    }
    kernels::gemm(ws.ctx.data(), attn.wo.w.ptr(), ws.attn.data(), rows, d, d,
                  false, false, false);
    for (size_t i = 0; i < nd; ++i) x[i] += ws.attn[i];

    ws.act_gate.resize(static_cast<size_t>(rows) * dff);
    ws.act_up.resize(static_cast<size_t>(rows) * dff);
    ws.act.resize(static_cast<size_t>(rows) * dff);
    ws.mlp_out.resize(nd);
    detail::rms_rows(x, ln2.gain.ptr(), ws.normed.data(), rows, d);
    kernels::gemm(ws.normed.data(), mlp.gate.w.ptr(), ws.act_gate.data(), rows,
                  d, dff, false, false, false);
    kernels::gemm(ws.normed.data(), mlp.up.w.ptr(), ws.act_up.data(), rows, d,
                  dff, false, false, false);
    for (size_t i = 0; i < static_cast<size_t>(rows) * dff; ++i) {
      const double vgate = static_cast<double>(ws.act_gate[i]);
      const T s = static_cast<T>(vgate / (1.0 + std::exp(-vgate)));
      ws.act[i] = s * ws.act_up[i];
    }
    kernels::gemm(ws.act.data(), mlp.down.w.ptr(), ws.mlp_out.data(), rows,
                  dff, d, false, false, false);
    for (size_t i = 0; i < nd; ++i) x[i] += ws.mlp_out[i];
  }
};

/// Sinusoidal absolute position row (the non-rotary encoding option).
template <typename T>
inline void sinusoidal_pe_row(int pos, int64_t d, T* out) {
  for (int64_t i = 0; i < d; i += 2) {
    const double div =
        std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
    out[i] = static_cast<T>(std::sin(static_cast<double>(pos) / div));
    if (i + 1 < d)
      out[i + 1] = static_cast<T>(std::cos(static_cast<double>(pos) / div));
  }
}

}  // namespace mtpslab
