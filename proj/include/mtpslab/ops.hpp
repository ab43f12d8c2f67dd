#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "mtpslab/kernels.hpp"
#include "mtpslab/tensor.hpp"

namespace mtpslab {

// ---------------------------------------------------------------------------
// shape helpers
// ---------------------------------------------------------------------------

inline int64_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

inline int64_t rows_of(const Shape& s) {
  return s.empty() ? 1 : shape_numel(s) / s.back();
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// matmul (batched over leading dims, optional operand transposes)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false,
                 bool tb = false) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  // A rank-2 right operand against a higher-rank left one is the shared
  // weight case: flatten the leading dims into one GEMM.
  const bool weight_case = (b.rank() == 2 && a.rank() > 2);
  if (weight_case && ta) {
    throw ShapeError("matmul: cannot transpose the flattened operand " +
                     shape_str(a.shape()));
  }
  if (!weight_case && a.rank() != b.rank()) {
    throw ShapeError("matmul: rank mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const int r = a.rank();
  int64_t nb = 1;
  if (!weight_case) {
    for (int i = 0; i < r - 2; ++i) {
      if (a.dim(i) != b.dim(i)) {
        throw ShapeError("matmul: batch dims disagree " +
                         shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
      }
      nb *= a.dim(i);
    }
  }
  int64_t m = ta ? a.dim(r - 1) : a.dim(r - 2);
  if (weight_case) {
    m = 1;
    for (int i = 0; i < r - 1; ++i) m *= a.dim(i);
  }
  const int64_t k = ta ? a.dim(r - 2) : a.dim(r - 1);
  const int64_t kb = tb ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
  const int64_t n = tb ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
  if (k != kb) {
    throw ShapeError("matmul: inner dims disagree " + shape_str(a.shape()) +
                     (ta ? "^T" : "") + " vs " + shape_str(b.shape()) +
                     (tb ? "^T" : ""));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - (weight_case ? 1 : 2));
  if (!weight_case) out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  kernels::gemm_batched(a.ptr(), b.ptr(), out.ptr(), nb, m, k, n, ta, tb,
                        false);

  if (tracing<T>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(
        out.storage_ptr(), [a, b, out, ta, tb, nb, m, k, n](Tape<T>& tp) {
          const std::vector<T>* g = tp.flow(out.storage());
          if (a.requires_grad()) {
            auto& ga = tp.flow_acc(a.storage());
            // dA_logical = g . B_logical^T, laid back into A's storage order.
            if (!ta && !tb) {
              kernels::gemm_batched(g->data(), b.ptr(), ga.data(), nb, m, n, k,
                                    false, true, true);
            } else if (!ta && tb) {
              kernels::gemm_batched(g->data(), b.ptr(), ga.data(), nb, m, n, k,
                                    false, false, true);
            } else if (ta && !tb) {
              kernels::gemm_batched(b.ptr(), g->data(), ga.data(), nb, k, n, m,
                                    false, true, true);
            } else {
              kernels::gemm_batched(b.ptr(), g->data(), ga.data(), nb, k, n, m,
                                    true, true, true);
            }
          }
          if (b.requires_grad()) {
            auto& gb = tp.flow_acc(b.storage());
            // dB_logical = A_logical^T . g.
            if (!ta && !tb) {
              kernels::gemm_batched(a.ptr(), g->data(), gb.data(), nb, k, m, n,
                                    true, false, true);
            } else if (!ta && tb) {
              kernels::gemm_batched(g->data(), a.ptr(), gb.data(), nb, n, m, k,
                                    true, false, true);
            } else if (ta && !tb) {
              kernels::gemm_batched(a.ptr(), g->data(), gb.data(), nb, k, m, n,
                                    false, false, true);
            } else {
              kernels::gemm_batched(g->data(), a.ptr(), gb.data(), nb, n, m, k,
                                    true, true, true);
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (tracing<T>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(), [a, b, out](Tape<T>& tp) {
      const std::vector<T>* g = tp.flow(out.storage());
      for (const Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto& gt = tp.flow_acc(t->storage());
        for (size_t i = 0; i < gt.size(); ++i) gt[i] += (*g)[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  if (tracing<T>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(), [a, b, out](Tape<T>& tp) {
      const std::vector<T>* g = tp.flow(out.storage());
      if (a.requires_grad()) {
        auto& ga = tp.flow_acc(a.storage());
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * b.ptr()[i];
      }
      if (b.requires_grad()) {
        auto& gb = tp.flow_acc(b.storage());
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*g)[i] * a.ptr()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double c) {
  Tensor<T> out(a.shape());
  const T tc = static_cast<T>(c);
  for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * tc;
  if (tracing<T>({&a})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(), [a, out, tc](Tape<T>& tp) {
      const std::vector<T>* g = tp.flow(out.storage());
      auto& ga = tp.flow_acc(a.storage());
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * tc;
    });
  }
  return out;
}

/// x[..., d] + bias[d], bias broadcast across rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const int64_t d = last_dim(x.shape());
  if (bias.rank() != 1 || bias.dim(0) != d) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                     " does not match last dim of " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  const int64_t rows = rows_of(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = x.ptr() + r * d;
    T* po = out.ptr() + r * d;
    for (int64_t j = 0; j < d; ++j) po[j] = px[j] + bias.ptr()[j];
  }
  if (tracing<T>({&x, &bias})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(),
                              [x, bias, out, rows, d](Tape<T>& tp) {
                                const std::vector<T>* g = tp.flow(out.storage());
                                if (x.requires_grad()) {
                                  auto& gx = tp.flow_acc(x.storage());
                                  for (size_t i = 0; i < gx.size(); ++i)
                                    gx[i] += (*g)[i];
                                }
                                if (bias.requires_grad()) {
                                  auto& gb = tp.flow_acc(bias.storage());
                                  for (int64_t r = 0; r < rows; ++r)
                                    for (int64_t j = 0; j < d; ++j)
                                      gb[j] += (*g)[r * d + j];
                                }
                              });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(x.ptr()[i]);
    out.ptr()[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
  }
  if (tracing<T>({&x})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(), [x, out](Tape<T>& tp) {
      const std::vector<T>* g = tp.flow(out.storage());
      auto& gx = tp.flow_acc(x.storage());
      for (size_t i = 0; i < gx.size(); ++i) {
        const double v = static_cast<double>(x.ptr()[i]);
        const double s = 1.0 / (1.0 + std::exp(-v));
        gx[i] += (*g)[i] * static_cast<T>(s * (1.0 + v * (1.0 - s)));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.ptr()[i]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (tracing<T>({&x})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(), [x, out](Tape<T>& tp) {
      const std::vector<T>* g = tp.flow(out.storage());
      auto& gx = tp.flow_acc(x.storage());
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// rms_norm: y_i = gain_i * x_i / sqrt(mean_j x_j^2 + eps), rowwise on last dim
// ---------------------------------------------------------------------------

inline constexpr double kRmsNormEps = 1e-6;

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain) {
  const int64_t d = last_dim(x.shape());
  if (d <= 0) throw ShapeError("rms_norm: empty last dim");
  if (gain.rank() != 1 || gain.dim(0) != d) {
    throw ShapeError("rms_norm: gain " + shape_str(gain.shape()) +
                     " does not match last dim of " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  const int64_t rows = rows_of(x.shape());
  kernels::parallel_for(rows, 64, [&](int64_t r) {
    const T* px = x.ptr() + r * d;
    T* po = out.ptr() + r * d;
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j)
      ss += static_cast<double>(px[j]) * static_cast<double>(px[j]);
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + kRmsNormEps);
    for (int64_t j = 0; j < d; ++j)
      po[j] = static_cast<T>(static_cast<double>(gain.ptr()[j]) *
                             static_cast<double>(px[j]) * inv);
  });
  if (tracing<T>({&x, &gain})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(
        out.storage_ptr(), [x, gain, out, rows, d](Tape<T>& tp) {
          const std::vector<T>* g = tp.flow(out.storage());
          std::vector<T>* gx =
              x.requires_grad() ? &tp.flow_acc(x.storage()) : nullptr;
          std::vector<T>* gg =
              gain.requires_grad() ? &tp.flow_acc(gain.storage()) : nullptr;
          for (int64_t r = 0; r < rows; ++r) {
            const T* px = x.ptr() + r * d;
            const T* pg = g->data() + r * d;
            double ss = 0.0;
            for (int64_t j = 0; j < d; ++j)
              ss += static_cast<double>(px[j]) * static_cast<double>(px[j]);
            const double inv =
                1.0 / std::sqrt(ss / static_cast<double>(d) + kRmsNormEps);
            if (gg) {
              for (int64_t j = 0; j < d; ++j)
                (*gg)[j] += static_cast<T>(static_cast<double>(pg[j]) *
                                           static_cast<double>(px[j]) * inv);
            }
            if (gx) {
              // dx_j = inv*gain_j*g_j - inv^3 * x_j/d * sum_i(g_i*gain_i*x_i)
              double dot = 0.0;
              for (int64_t j = 0; j < d; ++j)
                dot += static_cast<double>(pg[j]) *
                       static_cast<double>(gain.ptr()[j]) *
                       static_cast<double>(px[j]);
              const double c = inv * inv * inv * dot / static_cast<double>(d);
              for (int64_t j = 0; j < d; ++j)
                (*gx)[r * d + j] +=
                    static_cast<T>(inv * static_cast<double>(gain.ptr()[j]) *
                                       static_cast<double>(pg[j]) -
                                   c * static_cast<double>(px[j]));
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// masked softmax over the last dim
// ---------------------------------------------------------------------------

/// mask has one byte per (row, column) pair. Accepted layouts:
///   - mask.size() == n: one row mask shared by every row;
///   - mask.size() == (rows/heads) * n: x rows grouped as [.., heads, L, n]
///     with the mask shared across `heads` (attention layout).
/// Masked entries are exactly 0 in the output; unmasked entries are softmax
/// over the unmasked set, stabilized by max subtraction.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const std::vector<uint8_t>& mask,
                         int64_t heads = 1) {
  const int64_t n = last_dim(x.shape());
  const int64_t rows = rows_of(x.shape());
  int64_t mask_rows;
  if (static_cast<int64_t>(mask.size()) == n) {
    mask_rows = 1;
  } else if (heads >= 1 && rows % heads == 0 &&
             static_cast<int64_t>(mask.size()) == (rows / heads) * n) {
    mask_rows = rows / heads;
  } else {
    throw ShapeError("masked_softmax: mask of " + std::to_string(mask.size()) +
                     " entries does not fit " + shape_str(x.shape()));
  }
  // Row r of x uses mask row (block * L + r % L) where blocks of `heads`
  // share the same L mask rows.
  const int64_t L = (mask_rows == 1) ? 1 : (x.rank() >= 2 ? x.dim(x.rank() - 2) : 1);
  auto mask_row = [&](int64_t r) -> const uint8_t* {
    if (mask_rows == 1) return mask.data();
    const int64_t li = r % L;
    const int64_t blk = (r / L) / heads;
    return mask.data() + (blk * L + li) * n;
  };

  Tensor<T> out(x.shape());
  std::vector<int> bad_row(1, -1);
  kernels::parallel_for(rows, 16, [&](int64_t r) {
    const uint8_t* mrow = mask_row(r);
    const T* px = x.ptr() + r * n;
    T* po = out.ptr() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (int64_t j = 0; j < n; ++j) {
      if (mrow[j]) {
        mx = std::max(mx, static_cast<double>(px[j]));
        any = true;
      }
    }
    if (!any) {
      bad_row[0] = static_cast<int>(r);
      return;
    }
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      if (mrow[j]) {
        const double e = std::exp(static_cast<double>(px[j]) - mx);
        po[j] = static_cast<T>(e);
        z += e;
      } else {
        po[j] = T(0);
      }
    }
    const double invz = 1.0 / z;
    for (int64_t j = 0; j < n; ++j)
      if (mrow[j]) po[j] = static_cast<T>(static_cast<double>(po[j]) * invz);
  });
  if (bad_row[0] >= 0) {
    throw MaskError("masked_softmax: invalid mask, row " +
                    std::to_string(bad_row[0]) + " has no unmasked entry");
  }

  if (tracing<T>({&x})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(
        out.storage_ptr(), [x, out, rows, n](Tape<T>& tp) {
          const std::vector<T>* g = tp.flow(out.storage());
          auto& gx = tp.flow_acc(x.storage());
          // dx_j = p_j * (g_j - sum_i g_i p_i); masked entries have p_j = 0.
          kernels::parallel_for(rows, 16, [&](int64_t r) {
            const T* pp = out.ptr() + r * n;
            const T* pg = g->data() + r * n;
            double dot = 0.0;
            for (int64_t j = 0; j < n; ++j)
              dot += static_cast<double>(pg[j]) * static_cast<double>(pp[j]);
            for (int64_t j = 0; j < n; ++j)
              gx[r * n + j] += static_cast<T>(
                  static_cast<double>(pp[j]) *
                  (static_cast<double>(pg[j]) - dot));
          });
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// rotary position encoding (adjacent pairs, base 10000 by default)
// ---------------------------------------------------------------------------

/// x is [L, H, dh] or [B, H, L, dh]; positions has length L. Pair (2i, 2i+1)
/// of each head vector is rotated by angle pos * base^(-2i/dh). Position 0 is
/// the identity; every rotation preserves the pair norm.
template <typename T>
Tensor<T> rotary(const Tensor<T>& x, const std::vector<int>& positions,
                 double base = 10000.0) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError("rotary: expected rank 3 or 4, got " +
                     shape_str(x.shape()));
  }
  const int64_t dh = x.dim(x.rank() - 1);
  if (dh % 2 != 0) {
    throw ConfigError("rotary: head dim must be even, got " +
                      std::to_string(dh));
  }
  const int64_t L = (x.rank() == 3) ? x.dim(0) : x.dim(2);
  if (static_cast<int64_t>(positions.size()) != L) {
    throw ShapeError("rotary: positions length " +
                     std::to_string(positions.size()) +
                     " does not match sequence length " + std::to_string(L));
  }
  const int64_t rows = rows_of(x.shape());
  // Row r corresponds to sequence index: rank3 [L,H,dh] -> r / H;
  // rank4 [B,H,L,dh] -> r % L.
  const int64_t H3 = (x.rank() == 3) ? x.dim(1) : 0;

  struct Plan {
    // cos/sin per (sequence index, pair), shared by all batch/head rows.
    std::vector<double> cos_tab, sin_tab;
    int64_t rows, dh, H3, L;
    int64_t seq_of(int64_t r) const { return H3 > 0 ? r / H3 : r % L; }
    void rotate(const T* in, T* outp, int64_t r, bool inverse) const {
      const int64_t half = dh / 2;
      const double* ct = cos_tab.data() + seq_of(r) * half;
      const double* st = sin_tab.data() + seq_of(r) * half;
      for (int64_t i = 0; i < half; ++i) {
        const double c = ct[i];
        const double s = inverse ? -st[i] : st[i];
        const double x0 = static_cast<double>(in[2 * i]);
        const double x1 = static_cast<double>(in[2 * i + 1]);
        outp[2 * i] = static_cast<T>(x0 * c - x1 * s);
        outp[2 * i + 1] = static_cast<T>(x0 * s + x1 * c);
      }
    }
  };
  auto plan = std::make_shared<Plan>();
  plan->rows = rows;
  plan->dh = dh;
  plan->H3 = H3;
  plan->L = L;
  const int64_t half = dh / 2;
  plan->cos_tab.resize(static_cast<size_t>(L * half));
  plan->sin_tab.resize(static_cast<size_t>(L * half));
  for (int64_t l = 0; l < L; ++l) {
    const double pos = static_cast<double>(positions[static_cast<size_t>(l)]);
    for (int64_t i = 0; i < half; ++i) {
      const double ang =
          pos * std::pow(base, -2.0 * static_cast<double>(i) /
                                   static_cast<double>(dh));
      plan->cos_tab[static_cast<size_t>(l * half + i)] = std::cos(ang);
      plan->sin_tab[static_cast<size_t>(l * half + i)] = std::sin(ang);
    }
  }

  Tensor<T> out(x.shape());
  kernels::parallel_for(rows, 64, [&](int64_t r) {
    plan->rotate(x.ptr() + r * dh, out.ptr() + r * dh, r, false);
  });

  if (tracing<T>({&x})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(
        out.storage_ptr(), [x, out, plan](Tape<T>& tp) {
          const std::vector<T>* g = tp.flow(out.storage());
          auto& gx = tp.flow_acc(x.storage());
          std::vector<T> tmp(static_cast<size_t>(plan->dh));
          for (int64_t r = 0; r < plan->rows; ++r) {
            plan->rotate(g->data() + r * plan->dh, tmp.data(), r, true);
            for (int64_t j = 0; j < plan->dh; ++j)
              gx[r * plan->dh + j] += tmp[static_cast<size_t>(j)];
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding gather / scatter
// ---------------------------------------------------------------------------

/// table[V, d] gathered by ids; output shape = lead + [d] where
/// numel(lead) == ids.size().
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids,
                    Shape lead) {
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be rank 2, got " +
                     shape_str(table.shape()));
  }
  const int64_t V = table.dim(0);
  const int64_t d = table.dim(1);
  if (shape_numel(lead) != static_cast<int64_t>(ids.size())) {
    throw ShapeError("embedding: ids count " + std::to_string(ids.size()) +
                     " does not fill " + shape_str(lead));
  }
  for (int id : ids) {
    if (id < 0 || id >= V) {
      throw IndexError("embedding: token id " + std::to_string(id) +
                       " outside vocab of " + std::to_string(V));
    }
  }
  Shape out_shape = lead;
  out_shape.push_back(d);
  Tensor<T> out(out_shape);
  const int64_t n = static_cast<int64_t>(ids.size());
  for (int64_t i = 0; i < n; ++i) {
    const T* src = table.ptr() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
    std::copy(src, src + d, out.ptr() + i * d);
  }
  if (tracing<T>({&table})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(),
                              [table, out, ids, n, d](Tape<T>& tp) {
                                const std::vector<T>* g = tp.flow(out.storage());
                                auto& gt = tp.flow_acc(table.storage());
                                // Serial scatter: duplicate ids must
                                // accumulate in a fixed order.
                                for (int64_t i = 0; i < n; ++i) {
                                  T* dst = gt.data() +
                                           static_cast<int64_t>(
                                               ids[static_cast<size_t>(i)]) *
                                               d;
                                  const T* src = g->data() + i * d;
                                  for (int64_t j = 0; j < d; ++j)
                                    dst[j] += src[j];
                                }
                              });
  }
  return out;
}

// ---------------------------------------------------------------------------
// cross entropy (mean over non-ignored rows, fused log-softmax)
// ---------------------------------------------------------------------------

inline constexpr int kIgnoreIndex = -100;

/// logits[..., V] against one target per row. Returns mean over rows whose
/// target != ignore_index; all-ignored input yields 0 with zero gradient.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        int ignore_index = kIgnoreIndex) {
  const int64_t V = last_dim(logits.shape());
  const int64_t rows = rows_of(logits.shape());
  if (static_cast<int64_t>(targets.size()) != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(rows) + " rows");
  }
  int64_t n_valid = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || t >= V) {
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " outside vocab of " + std::to_string(V));
    }
    ++n_valid;
  }
  if (n_valid == 0) return Tensor<T>::scalar(T(0));

  // Probabilities are saved for the backward rule (p - onehot) / n_valid.
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<size_t>(rows * V), 0.0);
  std::vector<double> row_loss(static_cast<size_t>(rows), 0.0);
  kernels::parallel_for(rows, 8, [&](int64_t r) {
    if (targets[static_cast<size_t>(r)] == ignore_index) return;
    const T* pl = logits.ptr() + r * V;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < V; ++j)
      mx = std::max(mx, static_cast<double>(pl[j]));
    double z = 0.0;
    for (int64_t j = 0; j < V; ++j) {
      const double e = std::exp(static_cast<double>(pl[j]) - mx);
      (*probs)[static_cast<size_t>(r * V + j)] = e;
      z += e;
    }
    const double invz = 1.0 / z;
    for (int64_t j = 0; j < V; ++j)
      (*probs)[static_cast<size_t>(r * V + j)] *= invz;
    const double lse = mx + std::log(z);
    row_loss[static_cast<size_t>(r)] =
        lse - static_cast<double>(pl[targets[static_cast<size_t>(r)]]);
  });
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) total += row_loss[static_cast<size_t>(r)];
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n_valid)));

  if (tracing<T>({&logits})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(
        out.storage_ptr(),
        [logits, out, targets, probs, rows, V, n_valid,
         ignore_index](Tape<T>& tp) {
          const std::vector<T>* g = tp.flow(out.storage());
          const double go = static_cast<double>((*g)[0]) /
                            static_cast<double>(n_valid);
          auto& gl = tp.flow_acc(logits.storage());
          kernels::parallel_for(rows, 8, [&](int64_t r) {
            const int t = targets[static_cast<size_t>(r)];
            if (t == ignore_index) return;
            for (int64_t j = 0; j < V; ++j) {
              double p = (*probs)[static_cast<size_t>(r * V + j)];
              if (j == t) p -= 1.0;
              gl[r * V + j] += static_cast<T>(p * go);
            }
          });
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// data movement: reshape / narrow / concat / head split-merge
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), x.data());
  if (tracing<T>({&x})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(), [x, out](Tape<T>& tp) {
      const std::vector<T>* g = tp.flow(out.storage());
      auto& gx = tp.flow_acc(x.storage());
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[i];
    });
  }
  return out;
}

/// Contiguous slice [start, start+len) along `dim`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int dim, int64_t start, int64_t len) {
  if (dim < 0 || dim >= x.rank()) throw ShapeError("narrow: bad dim");
  if (start < 0 || len < 0 || start + len > x.dim(dim)) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") outside dim of " +
                     std::to_string(x.dim(dim)));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(dim)] = len;
  Tensor<T> out(out_shape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= x.dim(i);
  for (int i = dim + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const int64_t src_stride = x.dim(dim) * inner;
  const int64_t dst_stride = len * inner;
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = x.ptr() + o * src_stride + start * inner;
    std::copy(src, src + len * inner, out.ptr() + o * dst_stride);
  }
  if (tracing<T>({&x})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(
        out.storage_ptr(),
        [x, out, outer, inner, src_stride, dst_stride, start, len](Tape<T>& tp) {
          const std::vector<T>* g = tp.flow(out.storage());
          auto& gx = tp.flow_acc(x.storage());
          for (int64_t o = 0; o < outer; ++o) {
            const T* src = g->data() + o * dst_stride;
            T* dst = gx.data() + o * src_stride + start * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int dim) {
  if (a.rank() != b.rank() || dim < 0 || dim >= a.rank()) {
    throw ShapeError("concat: incompatible ranks " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  for (int i = 0; i < a.rank(); ++i) {
    if (i != dim && a.dim(i) != b.dim(i)) {
      throw ShapeError("concat: dims disagree " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
    }
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(dim)] = a.dim(dim) + b.dim(dim);
  Tensor<T> out(out_shape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= a.dim(i);
  for (int i = dim + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const int64_t la = a.dim(dim) * inner;
  const int64_t lb = b.dim(dim) * inner;
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(a.ptr() + o * la, a.ptr() + (o + 1) * la,
              out.ptr() + o * (la + lb));
    std::copy(b.ptr() + o * lb, b.ptr() + (o + 1) * lb,
              out.ptr() + o * (la + lb) + la);
  }
  if (tracing<T>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(
        out.storage_ptr(), [a, b, out, outer, la, lb](Tape<T>& tp) {
          const std::vector<T>* g = tp.flow(out.storage());
          if (a.requires_grad()) {
            auto& ga = tp.flow_acc(a.storage());
            for (int64_t o = 0; o < outer; ++o)
              for (int64_t i = 0; i < la; ++i)
                ga[o * la + i] += (*g)[o * (la + lb) + i];
          }
          if (b.requires_grad()) {
            auto& gb = tp.flow_acc(b.storage());
            for (int64_t o = 0; o < outer; ++o)
              for (int64_t i = 0; i < lb; ++i)
                gb[o * lb + i] += (*g)[o * (la + lb) + la + i];
          }
        });
  }
  return out;
}

/// [B, L, H*dh] -> [B, H, L, dh]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int64_t heads) {
  if (x.rank() != 3 || x.dim(2) % heads != 0) {
    throw ShapeError("split_heads: cannot split " + shape_str(x.shape()) +
                     " into " + std::to_string(heads) + " heads");
  }
  const int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2), dh = D / heads;
  Tensor<T> out({B, heads, L, dh});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t l = 0; l < L; ++l) {
        const T* src = x.ptr() + (b * L + l) * D + h * dh;
        T* dst = out.ptr() + ((b * heads + h) * L + l) * dh;
        std::copy(src, src + dh, dst);
      }
  if (tracing<T>({&x})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(),
                              [x, out, B, L, D, dh, heads](Tape<T>& tp) {
                                const std::vector<T>* g = tp.flow(out.storage());
                                auto& gx = tp.flow_acc(x.storage());
                                for (int64_t b = 0; b < B; ++b)
                                  for (int64_t h = 0; h < heads; ++h)
                                    for (int64_t l = 0; l < L; ++l) {
                                      const T* src =
                                          g->data() +
                                          ((b * heads + h) * L + l) * dh;
                                      T* dst =
                                          gx.data() + (b * L + l) * D + h * dh;
                                      for (int64_t j = 0; j < dh; ++j)
                                        dst[j] += src[j];
                                    }
                              });
  }
  return out;
}

/// Repeat x along a new leading dim: out[t, ...] = x. Backward sums over t.
template <typename T>
Tensor<T> tile0(const Tensor<T>& x, int64_t times) {
  if (times < 1) throw ShapeError("tile0: times must be >= 1");
  Shape out_shape;
  out_shape.push_back(times);
  for (int64_t d : x.shape()) out_shape.push_back(d);
  Tensor<T> out(out_shape);
  const int64_t n = x.numel();
  for (int64_t t = 0; t < times; ++t)
    std::copy(x.ptr(), x.ptr() + n, out.ptr() + t * n);
  if (tracing<T>({&x})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(),
                              [x, out, times, n](Tape<T>& tp) {
                                const std::vector<T>* g = tp.flow(out.storage());
                                auto& gx = tp.flow_acc(x.storage());
                                for (int64_t t = 0; t < times; ++t)
                                  for (int64_t i = 0; i < n; ++i)
                                    gx[i] += (*g)[t * n + i];
                              });
  }
  return out;
}

/// [B, H, L, dh] -> [B, L, H*dh]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw ShapeError("merge_heads: expected rank 4, got " +
                     shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), H = x.dim(1), L = x.dim(2), dh = x.dim(3);
  const int64_t D = H * dh;
  Tensor<T> out({B, L, D});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t l = 0; l < L; ++l) {
        const T* src = x.ptr() + ((b * H + h) * L + l) * dh;
        T* dst = out.ptr() + (b * L + l) * D + h * dh;
        std::copy(src, src + dh, dst);
      }
  if (tracing<T>({&x})) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.storage_ptr(),
                              [x, out, B, H, L, dh, D](Tape<T>& tp) {
                                const std::vector<T>* g = tp.flow(out.storage());
                                auto& gx = tp.flow_acc(x.storage());
                                for (int64_t b = 0; b < B; ++b)
                                  for (int64_t h = 0; h < H; ++h)
                                    for (int64_t l = 0; l < L; ++l) {
                                      const T* src =
                                          g->data() + (b * L + l) * D + h * dh;
                                      T* dst = gx.data() +
                                               ((b * H + h) * L + l) * dh;
                                      for (int64_t j = 0; j < dh; ++j)
                                        dst[j] += src[j];
                                    }
                              });
  }
  return out;
}

}  // namespace mtpslab
