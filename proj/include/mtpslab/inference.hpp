#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "mtpslab/model.hpp"
#include "mtpslab/report.hpp"
#include "mtpslab/rng.hpp"
#include "mtpslab/synthdata.hpp"

namespace mtpslab::infer {

struct DecodeConfig {
  enum class Mode { greedy, sample };
  Mode mode = Mode::greedy;
  double temperature = 1.0;
  uint64_t seed = 0;
  int max_speech_tokens = 512;
  /// Tokens accepted per backbone step; bounded by the trained module count
  /// for MTP variants and pinned to g for group variants.
  int m = 1;
  bool streaming = false;
  int cs = 15;
  int ct = 5;
  /// Never stop at EOS (latency benchmarking of long generations).
  bool ignore_eos = false;
};

/// Revealed text positions (including BOS) available before emitting chunk c;
/// tokens_done is the number of speech tokens emitted so far.
using RevealProvider = std::function<int(int chunk, int64_t tokens_done)>;

namespace detail {

class ScopedTimer {
 public:
  explicit ScopedTimer(double& acc)
      : acc_(acc), t0_(std::chrono::steady_clock::now()) {}
  ~ScopedTimer() {
    acc_ += std::chrono::duration<double, std::milli>(
                std::chrono::steady_clock::now() - t0_)
                .count();
  }

 private:
  double& acc_;
  std::chrono::steady_clock::time_point t0_;
};

template <typename T>
int argmax_row(const T* v, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

template <typename T>
int sample_row(const T* logits, int n, double temperature, Rng& rng) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j)
    mx = std::max(mx, static_cast<double>(logits[j]) / temperature);
  std::vector<double> p(static_cast<size_t>(n));
  double z = 0.0;
  for (int j = 0; j < n; ++j) {
    p[static_cast<size_t>(j)] =
        std::exp(static_cast<double>(logits[j]) / temperature - mx);
    z += p[static_cast<size_t>(j)];
  }
  const double u = rng.uniform() * z;
  double c = 0.0;
  for (int j = 0; j < n; ++j) {
    c += p[static_cast<size_t>(j)];
    if (u < c) return j;
  }
  return n - 1;
}

}  // namespace detail

/// Autoregressive generation engine with per-layer incremental caches. One
/// engine per thread; the model is shared read-only.
template <typename T>
class Engine {
 public:
  explicit Engine(const DecoderModel<T>& model) : model_(model) {}

  /// Generate speech tokens for a raw text-symbol prompt (BOS/SOS handled
  /// internally). The report's token list includes the terminal EOS when
  /// generation stopped at EOS, so backbone_forwards == ceil(len(tokens)/m)
  /// holds in every termination case.
  GenerationReport generate(const std::vector<int>& text,
                            const DecodeConfig& cfg) {
    std::vector<int> all_tokens;
    auto sink = [&](int, const std::vector<int>& chunk) {
      all_tokens.insert(all_tokens.end(), chunk.begin(), chunk.end());
    };
    GenerationReport rep = run(text, cfg, full_reveal(text), sink);
    rep.tokens = std::move(all_tokens);
    rep.tokens_per_forward =
        rep.backbone_forwards > 0
            ? static_cast<double>(rep.tokens.size()) /
                  static_cast<double>(rep.backbone_forwards)
            : 0.0;
    return rep;
  }

  static RevealProvider full_reveal(const std::vector<int>& text) {
    const int lt = 1 + static_cast<int>(text.size());
    return [lt](int, int64_t) { return lt; };
  }

  /// Test hook: record the logit row behind every emitted token.
  void set_logit_capture(std::vector<std::vector<double>>* capture) {
    logit_capture_ = capture;
  }

  /// The harness schedule: BOS first, then C_t more text positions per chunk
  /// (just in time for the chunk's visibility budget). DeepSeek inference
  /// merges tokens shifted by up to m-1, which needs that much extra text
  /// lookahead to stream.
  RevealProvider harness_reveal(const std::vector<int>& text,
                                const DecodeConfig& cfg) const {
    const int lt = 1 + static_cast<int>(text.size());
    const int lookahead =
        model_.cfg.variant == Variant::mtp_deepseek ? cfg.m - 1 : 0;
    const int ct = cfg.ct;
    return [lt, ct, lookahead](int chunk, int64_t) {
      return std::min(lt, chunk * ct + 1 + lookahead);
    };
  }

  /// Streaming generation: emits chunk 0 = the single token conditioned only
  /// on BOS, then C_s tokens per chunk, each chunk's tokens conditioned on at
  /// most min(L_t, c*C_t+1) text positions. A provider that reveals less
  /// than a chunk's budget raises StallError.
  GenerationReport generate_streaming(
      const std::vector<int>& text, const DecodeConfig& cfg,
      const RevealProvider& provider,
      const std::function<void(int, const std::vector<int>&)>& on_chunk) {
    DecodeConfig sc = cfg;
    sc.streaming = true;
    return run(text, sc, provider, on_chunk);
  }

 private:
  struct Caches {
    std::vector<LayerCache<T>> projector, backbone, modules;
  };

  const DecoderModel<T>& model_;
  Caches caches_;
  InferWorkspace<T> ws_;
  // Pipeline buffers: rows_[0] holds backbone outputs not yet consumed by
  // module 1, rows_[k] holds module-k outputs awaiting module k+1.
  struct Stage {
    std::vector<T> h;        // pending rows, row-major
    std::vector<int> pos;    // global positions of pending rows
  };
  std::vector<Stage> stages_;
  std::vector<T> last_h_;  // depth-k hidden state at the query row

  int lt_ = 0;
  int text_done_ = 0;    // text rows through projector+backbone
  int committed_ = 0;    // speech input rows through the backbone (incl. SOS)
  std::vector<int> inputs_;  // global input ids (text, SOS, emitted tokens)
  bool streaming_ = false;
  masks::ChunkSchedule sched_{15, 5};
  int group_g_ = 1;

  GenerationReport report_;

  Visibility row_visibility(int pos) const {
    if (pos < lt_) {
      return streaming_ ? Visibility::prefix(pos + 1) : Visibility::prefix(lt_);
    }
    int budget = lt_;
    if (streaming_) {
      const int offset = pos - lt_ + 1;  // group rows use group-space offsets
      const int token_offset =
          group_g_ == 1 ? offset : (offset == 1 ? 1 : (offset - 2) * group_g_ + 2);
      budget = std::min(lt_, masks::visible_text_budget(sched_, token_offset));
    }
    return Visibility::split(budget, lt_, pos + 1);
  }

  void ensure_caches(int reserve_positions) {
    const auto& cfg = model_.cfg;
    caches_.projector.assign(model_.projector.size(), {});
    caches_.backbone.assign(model_.backbone.size(), {});
    caches_.modules.assign(model_.modules.size(), {});
    const int dh = cfg.d_model / cfg.n_heads;
    for (auto& c : caches_.projector) c.reset(cfg.n_heads, dh, reserve_positions);
    for (auto& c : caches_.backbone) c.reset(cfg.n_heads, dh, reserve_positions);
    for (auto& c : caches_.modules) c.reset(cfg.n_heads, dh, reserve_positions);
  }

  void embed_row(const Tensor<T>& table, int id, int pos, T* out) const {
    const int64_t d = model_.cfg.d_model;
    const T* src = table.ptr() + static_cast<int64_t>(id) * d;
    std::copy(src, src + d, out);
    if (model_.cfg.pos_encoding == PosEncoding::sinusoidal && pos >= 0) {
      std::vector<T> pe(static_cast<size_t>(d));
      sinusoidal_pe_row(pos, d, pe.data());
      for (int64_t j = 0; j < d; ++j) out[j] += pe[j];
    }
  }

  /// Extend projector and backbone over newly revealed text rows.
  void extend_text(int upto) {
    upto = std::min(upto, lt_);
    if (upto <= text_done_) return;
    const int64_t d = model_.cfg.d_model;
    const int n = upto - text_done_;
    std::vector<T> rows(static_cast<size_t>(n) * d);
    std::vector<int> positions(static_cast<size_t>(n));
    std::vector<Visibility> vis(static_cast<size_t>(n));
    std::vector<Visibility> proj_vis(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int pos = text_done_ + i;
      positions[static_cast<size_t>(i)] = pos;
      embed_row(model_.text_embed, inputs_[static_cast<size_t>(pos)], pos,
                rows.data() + static_cast<int64_t>(i) * d);
      vis[static_cast<size_t>(i)] = row_visibility(pos);
      proj_vis[static_cast<size_t>(i)] = Visibility::prefix(pos + 1);
    }
    {
      detail::ScopedTimer t(report_.stages.projector_ms);
      for (size_t li = 0; li < model_.projector.size(); ++li) {
        model_.projector[li].extend(caches_.projector[li], rows.data(), n,
                                    positions.data(), proj_vis.data(),
                                    model_.use_rotary(), ws_);
      }
    }
    {
      detail::ScopedTimer t(report_.stages.backbone_ms);
      for (size_t li = 0; li < model_.backbone.size(); ++li) {
        model_.backbone[li].extend(caches_.backbone[li], rows.data(), n,
                                   positions.data(), vis.data(),
                                   model_.use_rotary(), ws_);
      }
    }
    push_stage_rows(0, rows, positions);
    text_done_ = upto;
  }

  /// Backbone extension over new speech-segment rows (embeddings already
  /// assembled). Rows must continue the committed prefix contiguously.
  void extend_speech(std::vector<T> rows, const std::vector<int>& positions) {
    const int n = static_cast<int>(positions.size());
    if (n == 0) return;
    for (int i = 0; i < n; ++i) {
      if (positions[static_cast<size_t>(i)] != lt_ + committed_ + i) {
        throw ContractError("cached extend: gap in appended positions");
      }
    }
    std::vector<Visibility> vis(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      vis[static_cast<size_t>(i)] = row_visibility(positions[static_cast<size_t>(i)]);
    {
      detail::ScopedTimer t(report_.stages.backbone_ms);
      for (size_t li = 0; li < model_.backbone.size(); ++li) {
        model_.backbone[li].extend(caches_.backbone[li], rows.data(), n,
                                   positions.data(), vis.data(),
                                   model_.use_rotary(), ws_);
      }
    }
    committed_ += n;
    const int64_t d = model_.cfg.d_model;
    last_h_.assign(rows.end() - d, rows.end());
    push_stage_rows(0, rows, positions);
  }

  void push_stage_rows(size_t depth, const std::vector<T>& rows,
                       const std::vector<int>& positions) {
    if (stages_.empty()) return;  // no modules in play
    if (depth >= stages_.size()) return;
    auto& st = stages_[depth];
    st.h.insert(st.h.end(), rows.begin(), rows.end());
    st.pos.insert(st.pos.end(), positions.begin(), positions.end());
  }

  /// True when the merge input for depth k at global row `pos` exists and,
  /// for text, has been revealed.
  bool merge_input_ready(int pos, int k) const {
    const int j = pos + k;
    if (j < lt_) return j < text_done_;
    return j < static_cast<int>(inputs_.size());
  }

  /// Run module `k` (1-based depth) over the pending rows at depth k-1 whose
  /// inputs are available; rows inside a streaming reveal margin stay pending
  /// (they are not yet visible to any query). Outputs feed depth k's buffer;
  /// the newest processed row's state lands in last_h_.
  void run_module(int k) {
    auto& src = stages_[static_cast<size_t>(k - 1)];
    const int64_t d = model_.cfg.d_model;
    const bool deepseek = model_.cfg.variant == Variant::mtp_deepseek;

    std::vector<T> ready_h;
    std::vector<int> ready_pos;
    std::vector<T> defer_h;
    std::vector<int> defer_pos;
    for (size_t i = 0; i < src.pos.size(); ++i) {
      const int pos = src.pos[i];
      const bool ready = !deepseek || merge_input_ready(pos, k);
      auto& h = ready ? ready_h : defer_h;
      auto& p = ready ? ready_pos : defer_pos;
      h.insert(h.end(), src.h.begin() + static_cast<int64_t>(i) * d,
               src.h.begin() + static_cast<int64_t>(i + 1) * d);
      p.push_back(pos);
    }
    src.h = std::move(defer_h);
    src.pos = std::move(defer_pos);
    const int n = static_cast<int>(ready_pos.size());
    if (n == 0) {
      throw StallError("module chain: depth " + std::to_string(k) +
                       " has no processable rows (text not revealed?)");
    }

    std::vector<T> rows;
    if (!deepseek) {
      rows = std::move(ready_h);
    } else {
      // DeepSeek merge: concat(rms(h), rms(emb(input at pos+k))) -> linear.
      rows.assign(static_cast<size_t>(n) * d, T(0));
      const auto& mg = model_.merges[static_cast<size_t>(k - 1)];
      std::vector<T> nh(static_cast<size_t>(d)), ne(static_cast<size_t>(d));
      std::vector<T> cat(static_cast<size_t>(2 * d));
      for (int i = 0; i < n; ++i) {
        const int pos = ready_pos[static_cast<size_t>(i)];
        const int tok = inputs_[static_cast<size_t>(pos + k)];
        const bool is_text = pos + k < lt_;
        // Raw embedding, no positional term (token identity only).
        const Tensor<T>& table =
            is_text ? model_.text_embed : model_.speech_embed;
        const T* erow = table.ptr() + static_cast<int64_t>(tok) * d;
        mtpslab::detail::rms_rows(ready_h.data() + static_cast<int64_t>(i) * d,
                         mg.norm_h.gain.ptr(), nh.data(), 1, d);
        mtpslab::detail::rms_rows(erow, mg.norm_e.gain.ptr(), ne.data(), 1, d);
        std::copy(nh.begin(), nh.end(), cat.begin());
        std::copy(ne.begin(), ne.end(), cat.begin() + d);
        kernels::gemm(cat.data(), mg.proj.w.ptr(),
                      rows.data() + static_cast<int64_t>(i) * d, 1, 2 * d, d,
                      false, false, false);
        for (int64_t j = 0; j < d; ++j)
          rows[static_cast<size_t>(i) * d + static_cast<size_t>(j)] +=
              mg.proj.b.ptr()[j];
      }
    }
    std::vector<Visibility> vis(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      vis[static_cast<size_t>(i)] =
          row_visibility(ready_pos[static_cast<size_t>(i)]);
    {
      detail::ScopedTimer t(report_.stages.mtp_modules_ms);
      model_.modules[static_cast<size_t>(k - 1)].extend(
          caches_.modules[static_cast<size_t>(k - 1)], rows.data(), n,
          ready_pos.data(), vis.data(), model_.use_rotary(), ws_);
    }
    last_h_.assign(rows.end() - d, rows.end());
    push_stage_rows(static_cast<size_t>(k), rows, ready_pos);
  }

  int emit_from_logits(const std::vector<T>& logits, Rng& rng,
                       const DecodeConfig& cfg) {
    for (T v : logits) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw NumericError("generate: non-finite logits");
      }
    }
    if (logit_capture_) {
      logit_capture_->emplace_back(logits.begin(), logits.end());
    }
    const int n = static_cast<int>(logits.size());
    return cfg.mode == DecodeConfig::Mode::greedy
               ? detail::argmax_row(logits.data(), n)
               : detail::sample_row(logits.data(), n, cfg.temperature, rng);
  }

  std::vector<std::vector<double>>* logit_capture_ = nullptr;

  std::vector<T> head_row(int k, const T* h) const {
    const auto& head = model_.heads[static_cast<size_t>(k)];
    const int64_t d = model_.cfg.d_model;
    const int64_t v = head.proj.w.dim(1);
    std::vector<T> normed(static_cast<size_t>(d));
    mtpslab::detail::rms_rows(h, head.norm.gain.ptr(), normed.data(), 1, d);
    std::vector<T> logits(static_cast<size_t>(v));
    kernels::gemm(normed.data(), head.proj.w.ptr(), logits.data(), 1, d, v,
                  false, false, false);
    for (int64_t j = 0; j < v; ++j) logits[static_cast<size_t>(j)] += head.proj.b.ptr()[j];
    return logits;
  }

  GenerationReport run(
      const std::vector<int>& text, const DecodeConfig& cfg,
      const RevealProvider& provider,
      const std::function<void(int, const std::vector<int>&)>& on_chunk) {
    const auto& mc = model_.cfg;
    validate_decode(cfg);
    report_ = GenerationReport{};
    streaming_ = cfg.streaming;
    sched_ = masks::ChunkSchedule(cfg.cs, cfg.ct);
    group_g_ = mc.is_group() ? mc.group_size() : 1;
    lt_ = 1 + static_cast<int>(text.size());
    text_done_ = 0;
    committed_ = 0;
    inputs_.clear();
    inputs_.push_back(mc.bos_id());
    inputs_.insert(inputs_.end(), text.begin(), text.end());
    for (int tok : text) {
      if (tok < 0 || tok >= mc.v_text) {
        throw IndexError("generate: text token " + std::to_string(tok) +
                         " outside vocab");
      }
    }
    inputs_.push_back(mc.sos_id());
    const int depth_used = depth_for(cfg);
    stages_.assign(depth_used > 0 ? static_cast<size_t>(depth_used) + 1 : 0,
                   Stage{});
    ensure_caches(lt_ + 2 + cfg.max_speech_tokens + cfg.m + group_g_);

    Rng rng(Rng::mix(cfg.seed, Rng::hash_str("decode")));
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<int> chunk_tokens;
    int chunk_index = 0;
    int64_t tokens_done = 0;
    bool stopped = false;
    const int64_t d = mc.d_model;

    auto flush_chunk = [&](bool force) {
      const int chunk_cap = streaming_ ? (chunk_index == 0 ? 1 : cfg.cs)
                                       : cfg.max_speech_tokens + 2;
      while (static_cast<int>(chunk_tokens.size()) >= chunk_cap ||
             (force && !chunk_tokens.empty())) {
        const int take =
            std::min<int>(chunk_cap, static_cast<int>(chunk_tokens.size()));
        std::vector<int> chunk(chunk_tokens.begin(),
                               chunk_tokens.begin() + take);
        chunk_tokens.erase(chunk_tokens.begin(), chunk_tokens.begin() + take);
        on_chunk(chunk_index, chunk);
        ++chunk_index;
        if (chunk_tokens.empty()) break;
      }
    };

    auto ensure_reveal = [&](int n_pending) {
      // Budget of the newest row about to enter the backbone (budgets are
      // monotone in the offset, so covering it covers the whole extension).
      const int query_pos = lt_ + committed_ + n_pending - 1;
      const int need = row_visibility(query_pos).r0_end;
      const int got = std::min(provider(chunk_index, tokens_done), lt_);
      if (got < need) {
        throw StallError("streaming generation stalled: chunk " +
                         std::to_string(chunk_index) + " needs " +
                         std::to_string(need) + " text positions, " +
                         std::to_string(got) + " revealed");
      }
      extend_text(got);
    };

    // Pending speech-segment inputs for the next backbone extension; starts
    // with SOS, then each block's accepted tokens (or one composed group).
    std::vector<T> pending_rows;
    std::vector<int> pending_pos;
    {
      pending_rows.resize(static_cast<size_t>(d));
      embed_row(model_.speech_embed, mc.sos_id(), lt_, pending_rows.data());
      pending_pos = {lt_};
    }

    while (!stopped && tokens_done < cfg.max_speech_tokens) {
      ensure_reveal(static_cast<int>(pending_pos.size()));
      extend_speech(std::move(pending_rows), pending_pos);
      pending_rows.clear();
      pending_pos.clear();
      ++report_.backbone_forwards;

      std::vector<int> block;
      if (mc.is_group()) {
        std::vector<T> logits_all;
        {
          detail::ScopedTimer t(report_.stages.heads_ms);
          auto rows = Tensor<T>::from({1, 1, d}, last_h_);
          auto logits = model_.decompose_groups(rows, 1, 1);  // [1,1,g,V]
          logits_all = logits.data();
        }
        for (int slot = 0;
             slot < group_g_ && tokens_done < cfg.max_speech_tokens; ++slot) {
          std::vector<T> row(
              logits_all.begin() + static_cast<int64_t>(slot) * mc.v_speech,
              logits_all.begin() +
                  static_cast<int64_t>(slot + 1) * mc.v_speech);
          detail::ScopedTimer t(report_.stages.heads_ms);
          const int tok = emit_from_logits(row, rng, cfg);
          block.push_back(tok);
          ++tokens_done;
          if (tok == mc.eos_id() && !cfg.ignore_eos) {
            stopped = true;
            break;
          }
        }
      } else {
        // Head 0 from the backbone state; heads k from depth-k states for
        // the chained variants, from the same backbone state for parallel.
        const bool chained = depth_for(cfg) > 0;
        for (int k = 0; k < cfg.m && tokens_done < cfg.max_speech_tokens;
             ++k) {
          if (k > 0 && chained) run_module(k);
          int tok;
          {
            detail::ScopedTimer t(report_.stages.heads_ms);
            tok = emit_from_logits(head_row(k, last_h_.data()), rng, cfg);
          }
          block.push_back(tok);
          inputs_.push_back(tok);
          ++tokens_done;
          if (tok == mc.eos_id() && !cfg.ignore_eos) {
            stopped = true;
            break;
          }
        }
      }

      chunk_tokens.insert(chunk_tokens.end(), block.begin(), block.end());
      flush_chunk(false);

      if (!stopped && tokens_done < cfg.max_speech_tokens) {
        // Commit the block as the next backbone inputs.
        if (mc.is_group()) {
          for (int tok : block) inputs_.push_back(tok);
          pending_rows.resize(static_cast<size_t>(d));
          compose_row(block, lt_ + committed_, pending_rows.data());
          pending_pos = {lt_ + committed_};
        } else {
          const int base = lt_ + committed_;
          pending_rows.resize(block.size() * static_cast<size_t>(d));
          for (size_t i = 0; i < block.size(); ++i) {
            embed_row(model_.speech_embed, block[i], base + static_cast<int>(i),
                      pending_rows.data() + static_cast<int64_t>(i) * d);
            pending_pos.push_back(base + static_cast<int>(i));
          }
        }
      }
      // Drop pipeline rows no module will consume before the next block.
      if (!stages_.empty()) {
        stages_.back().h.clear();
        stages_.back().pos.clear();
      }
    }
    flush_chunk(true);

    report_.total_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t_start)
                           .count();
    return report_;
  }

  /// Concatenated raw token embeddings through the compose projection, plus
  /// the composed row's own positional term.
  void compose_row(const std::vector<int>& block, int pos, T* out) const {
    const int64_t d = model_.cfg.d_model;
    const int g = group_g_;
    std::vector<T> cat(static_cast<size_t>(g) * d);
    for (int i = 0; i < g; ++i) {
      const T* src =
          model_.speech_embed.ptr() +
          static_cast<int64_t>(block[static_cast<size_t>(i)]) * d;
      std::copy(src, src + d, cat.data() + static_cast<int64_t>(i) * d);
    }
    kernels::gemm(cat.data(), model_.compose.w.ptr(), out, 1,
                  static_cast<int64_t>(g) * d, d, false, false, false);
    for (int64_t j = 0; j < d; ++j) out[j] += model_.compose.b.ptr()[j];
    if (model_.cfg.pos_encoding == PosEncoding::sinusoidal) {
      std::vector<T> pe(static_cast<size_t>(d));
      sinusoidal_pe_row(pos, d, pe.data());
      for (int64_t j = 0; j < d; ++j) out[j] += pe[j];
    }
  }

  int depth_for(const DecodeConfig& cfg) const {
    if (model_.cfg.variant == Variant::mtp_vocalnet ||
        model_.cfg.variant == Variant::mtp_deepseek) {
      return cfg.m - 1;
    }
    return 0;
  }

  void validate_decode(const DecodeConfig& cfg) const {
    const auto& mc = model_.cfg;
    if (cfg.m < 1) throw ConfigError("decode: m must be >= 1");
    if (mc.variant == Variant::ntp && cfg.m != 1) {
      throw ConfigError("decode: ntp accepts only m = 1");
    }
    if (mc.is_mtp() && cfg.m > mc.n) {
      throw ConfigError("decode: m = " + std::to_string(cfg.m) +
                        " exceeds trained module count N = " +
                        std::to_string(mc.n));
    }
    if (mc.is_group() && cfg.m != mc.group_size()) {
      throw ConfigError("decode: group variants fix m to the group size g = " +
                        std::to_string(mc.group_size()));
    }
    if (cfg.max_speech_tokens < 1) {
      throw ConfigError("decode: max_speech_tokens must be >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// teacher-forced distribution statistics
// ---------------------------------------------------------------------------

struct EntropyStats {
  double mean_max_prob = 0.0;
  double mean_entropy = 0.0;
  int64_t n_tokens = 0;
  /// Fixed-width bins: max-prob width 0.05 on [0,1]; entropy width 0.25 on
  /// [0, ln V].
  std::vector<int64_t> hist_max_prob;
  std::vector<int64_t> hist_entropy;
};

inline constexpr double kMaxProbBinWidth = 0.05;
inline constexpr double kEntropyBinWidth = 0.25;

/// Head-0 distribution statistics over teacher-forced forwards. Entropy is
/// computed through the log-sum-exp identity H = lse - sum_i p_i * l_i; the
/// test suite re-derives it by direct summation of -p ln p.
template <typename T>
EntropyStats entropy_stats(const DecoderModel<T>& model,
                           const std::vector<synth::CorpusRecord>& records,
                           int64_t n_tokens) {
  const auto& cfg = model.cfg;
  EntropyStats stats;
  const double ln_v = std::log(static_cast<double>(cfg.v_speech));
  stats.hist_max_prob.assign(
      static_cast<size_t>(std::ceil(1.0 / kMaxProbBinWidth)), 0);
  stats.hist_entropy.assign(
      static_cast<size_t>(std::ceil(ln_v / kEntropyBinWidth)) + 1, 0);
  double sum_max = 0.0, sum_h = 0.0;

  const masks::ChunkSchedule sched(cfg.cs, cfg.ct);
  for (size_t ri = 0; ri < records.size() && stats.n_tokens < n_tokens; ++ri) {
    const auto& rec = records[ri];
    std::vector<int> text{cfg.bos_id()};
    text.insert(text.end(), rec.text.begin(), rec.text.end());
    std::vector<int> speech{cfg.sos_id()};
    speech.insert(speech.end(), rec.speech.begin(), rec.speech.end() - 1);
    const int lt = static_cast<int>(text.size());
    const int ls = static_cast<int>(speech.size());
    const auto mask = padded_joint_mask(lt, ls, lt, ls,
                                        masks::Mode::nonstreaming, sched);
    auto h = model.backbone_forward_one(text, speech, mask);
    auto rows = narrow(h, 0, lt, ls);
    auto logits = model.head_logits(0, rows);  // [ls, V]
    const int64_t V = cfg.v_speech;
    for (int64_t r = 0; r < ls && stats.n_tokens < n_tokens; ++r) {
      const T* l = logits.ptr() + r * V;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < V; ++j)
        mx = std::max(mx, static_cast<double>(l[j]));
      double z = 0.0;
      for (int64_t j = 0; j < V; ++j)
        z += std::exp(static_cast<double>(l[j]) - mx);
      const double lse = mx + std::log(z);
      double dot = 0.0;  // sum_i p_i * l_i
      double pmax = 0.0;
      for (int64_t j = 0; j < V; ++j) {
        const double p = std::exp(static_cast<double>(l[j]) - lse);
        dot += p * static_cast<double>(l[j]);
        pmax = std::max(pmax, p);
      }
      const double ent = lse - dot;
      sum_max += pmax;
      sum_h += ent;
      stats.hist_max_prob[std::min(
          stats.hist_max_prob.size() - 1,
          static_cast<size_t>(pmax / kMaxProbBinWidth))]++;
      stats.hist_entropy[std::min(
          stats.hist_entropy.size() - 1,
          static_cast<size_t>(std::max(0.0, ent) / kEntropyBinWidth))]++;
      ++stats.n_tokens;
    }
  }
  if (stats.n_tokens > 0) {
    stats.mean_max_prob = sum_max / static_cast<double>(stats.n_tokens);
    stats.mean_entropy = sum_h / static_cast<double>(stats.n_tokens);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// latency benchmarking
// ---------------------------------------------------------------------------

struct BenchResult {
  GenerationReport aggregate;   // medians of per-trial stage/total times
  double median_total_ms = 0.0;
  int64_t tokens = 0;
  int64_t backbone_forwards = 0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median per-stage wall times over n_trials passes of the prompt set, with
/// `warmup` initial passes discarded. Single-threaded timing is the caller's
/// responsibility (the CLI pins the kernel thread cap).
template <typename T>
BenchResult bench_latency(const DecoderModel<T>& model,
                          const std::vector<std::vector<int>>& prompts,
                          const DecodeConfig& cfg, int n_trials,
                          int warmup = 3) {
  BenchResult res;
  std::vector<double> proj, bb, mods, heads, total;
  for (int trial = 0; trial < warmup + n_trials; ++trial) {
    StageTimes st;
    double tot = 0.0;
    int64_t toks = 0, fwds = 0;
    for (const auto& p : prompts) {
      Engine<T> eng(model);
      const auto rep = eng.generate(p, cfg);
      st.projector_ms += rep.stages.projector_ms;
      st.backbone_ms += rep.stages.backbone_ms;
      st.mtp_modules_ms += rep.stages.mtp_modules_ms;
      st.heads_ms += rep.stages.heads_ms;
      tot += rep.total_ms;
      toks += static_cast<int64_t>(rep.tokens.size());
      fwds += rep.backbone_forwards;
    }
    if (trial < warmup) continue;
    proj.push_back(st.projector_ms);
    bb.push_back(st.backbone_ms);
    mods.push_back(st.mtp_modules_ms);
    heads.push_back(st.heads_ms);
    total.push_back(tot);
    res.tokens = toks;
    res.backbone_forwards = fwds;
  }
  res.aggregate.stages.projector_ms = median_of(proj);
  res.aggregate.stages.backbone_ms = median_of(bb);
  res.aggregate.stages.mtp_modules_ms = median_of(mods);
  res.aggregate.stages.heads_ms = median_of(heads);
  res.aggregate.total_ms = res.median_total_ms = median_of(total);
  res.aggregate.backbone_forwards = res.backbone_forwards;
  res.aggregate.tokens_per_forward =
      res.backbone_forwards > 0
          ? static_cast<double>(res.tokens) /
                static_cast<double>(res.backbone_forwards)
          : 0.0;
  return res;
}

/// Pairwise realized speedup: the same checkpoint and prompts at cfg.m versus
/// m = 1.
template <typename T>
BenchResult bench_latency_vs_m1(const DecoderModel<T>& model,
                                const std::vector<std::vector<int>>& prompts,
                                const DecodeConfig& cfg, int n_trials,
                                int warmup = 3) {
  BenchResult at_m = bench_latency(model, prompts, cfg, n_trials, warmup);
  DecodeConfig base = cfg;
  base.m = 1;
  BenchResult at_1 = bench_latency(model, prompts, base, n_trials, warmup);
  at_m.aggregate.realized_speedup =
      at_m.median_total_ms > 0 ? at_1.median_total_ms / at_m.median_total_ms
                               : 0.0;
  return at_m;
}

}  // namespace mtpslab::infer
