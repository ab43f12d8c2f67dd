#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "mtpslab/checkpoint.hpp"
#include "mtpslab/layers.hpp"
#include "mtpslab/masks.hpp"
#include "mtpslab/model_config.hpp"
#include "mtpslab/ops.hpp"

namespace mtpslab {

// ---------------------------------------------------------------------------
// mask adapters (the single place 1-based mask space meets 0-based tensors)
// ---------------------------------------------------------------------------

/// Embed a 1-based sample mask into a padded 0-based grid of (LT+LS)^2 bytes.
/// Real text rows land at [0, lt), the speech segment at [LT, LT+ls); padding
/// rows attend only to themselves and padding columns are invisible.
inline std::vector<uint8_t> embed_mask_into_padded(const masks::AttnMask& m,
                                                   int lt, int ls, int LT,
                                                   int LS) {
  const int L = LT + LS;
  std::vector<uint8_t> out(static_cast<size_t>(L) * L, 0);
  auto padded_index = [&](int one_based) {
    // 1..lt -> 0..lt-1; lt+1..lt+ls -> LT..LT+ls-1.
    return one_based <= lt ? one_based - 1 : LT + (one_based - lt - 1);
  };
  for (int i = 1; i <= lt + ls; ++i) {
    const int pi = padded_index(i);
    for (int j = 1; j <= lt + ls; ++j) {
      if (m.at(i, j)) {
        out[static_cast<size_t>(pi) * L + padded_index(j)] = 1;
      }
    }
  }
  for (int i = lt; i < LT; ++i) out[static_cast<size_t>(i) * L + i] = 1;
  for (int i = LT + ls; i < L; ++i) out[static_cast<size_t>(i) * L + i] = 1;
  return out;
}

inline std::vector<uint8_t> padded_joint_mask(
    int lt, int ls, int LT, int LS, masks::Mode mode,
    const masks::ChunkSchedule& sched,
    masks::NonstreamingSemantics sem = masks::NonstreamingSemantics::caption) {
  const masks::SequenceLayout layout(lt, ls);
  const masks::AttnMask m =
      mode == masks::Mode::nonstreaming
          ? masks::build_nonstreaming_mask(layout, sem)
          : masks::build_streaming_mask(layout, sched);
  return embed_mask_into_padded(m, lt, ls, LT, LS);
}

/// Group-space sample mask: speech rows are SOS plus composed group
/// embeddings. A group row's text budget is that of its first covered token,
/// the conservative choice under the chunk schedule.
inline masks::AttnMask group_sample_mask(int lt, int n_speech_rows,
                                         masks::Mode mode,
                                         const masks::ChunkSchedule& sched,
                                         int g) {
  const int n = lt + n_speech_rows;
  masks::AttnMask m(n);
  if (mode == masks::Mode::nonstreaming) {
    return masks::build_nonstreaming_mask(
        masks::SequenceLayout(lt, n_speech_rows));
  }
  for (int i = 1; i <= lt; ++i)
    for (int j = 1; j <= i; ++j) m.set(i, j, true);
  for (int o = 1; o <= n_speech_rows; ++o) {
    const int i = lt + o;
    const int token_offset = (o == 1) ? 1 : (o - 2) * g + 2;
    const int budget =
        std::min(lt, masks::visible_text_budget(sched, token_offset));
    for (int j = 1; j <= budget; ++j) m.set(i, j, true);
    for (int j = lt + 1; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

inline std::vector<uint8_t> padded_group_joint_mask(
    int lt, int n_speech_rows, int LT, int LS, masks::Mode mode,
    const masks::ChunkSchedule& sched, int g) {
  return embed_mask_into_padded(group_sample_mask(lt, n_speech_rows, mode,
                                                  sched, g),
                                lt, n_speech_rows, LT, LS);
}

/// Causal text-only mask for the projector, padded to LT.
inline std::vector<uint8_t> padded_text_mask(int lt, int LT) {
  std::vector<uint8_t> out(static_cast<size_t>(LT) * LT, 0);
  for (int i = 0; i < lt; ++i)
    for (int j = 0; j <= i; ++j) out[static_cast<size_t>(i) * LT + j] = 1;
  for (int i = lt; i < LT; ++i) out[static_cast<size_t>(i) * LT + i] = 1;
  return out;
}

// ---------------------------------------------------------------------------
// the decoder model
// ---------------------------------------------------------------------------

template <typename T>
struct DeepSeekMerge {
  RmsNormLayer<T> norm_h, norm_e;
  Linear<T> proj;  // [2d -> d]

  static DeepSeekMerge make(ParamBuilder<T>& pb, const std::string& prefix,
                            int64_t d) {
    DeepSeekMerge m;
    m.norm_h = RmsNormLayer<T>::make(pb, prefix + ".norm_h", d);
    m.norm_e = RmsNormLayer<T>::make(pb, prefix + ".norm_e", d);
    m.proj = Linear<T>::make(pb, prefix + ".proj", 2 * d, d, /*bias=*/true);
    return m;
  }
};

template <typename T>
struct DecoderModel {
  using scalar_type = T;

  ModelConfig cfg;
  uint64_t init_seed = 0;

  Tensor<T> text_embed;    // [v_text, d]
  Tensor<T> speech_embed;  // [v_speech, d]
  std::vector<DecoderLayer<T>> projector;
  std::vector<DecoderLayer<T>> backbone;
  std::vector<DecoderLayer<T>> modules;      // MTP modules (depths 1..N-1)
  std::vector<DeepSeekMerge<T>> merges;      // mtp_deepseek only
  std::vector<OutHead<T>> heads;             // N heads (head 0 = backbone's)
  Linear<T> compose;                         // group variants: [g*d -> d]
  OutHead<T> decompose_linear;               // group_linear: [d -> g*V]
  Tensor<T> decompose_queries;               // group_trans: [g, d]
  std::vector<DecoderLayer<T>> decomposer;   // group_trans: 2 layers
  OutHead<T> decompose_head;                 // group_trans: [d -> V]

  std::vector<std::pair<std::string, Tensor<T>>> params;

  bool use_rotary() const { return cfg.pos_encoding == PosEncoding::rotary; }

  static DecoderModel init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (cfg.variant == Variant::ntp && cfg.n != 1) {
      throw ConfigError("config: ntp requires n == 1");
    }
    DecoderModel m;
    m.cfg = cfg;
    m.init_seed = seed;
    ParamBuilder<T> pb(seed, &m.params);
    const int64_t d = cfg.d_model;
    m.text_embed = pb.matrix("embed.text", cfg.v_text, d);
    m.speech_embed = pb.matrix("embed.speech", cfg.v_speech, d);
    for (int i = 0; i < cfg.n_projector_layers; ++i) {
      m.projector.push_back(DecoderLayer<T>::make(
          pb, "projector." + std::to_string(i), d, cfg.n_heads, cfg.d_ff));
    }
    for (int i = 0; i < cfg.n_backbone_layers; ++i) {
      m.backbone.push_back(DecoderLayer<T>::make(
          pb, "backbone." + std::to_string(i), d, cfg.n_heads, cfg.d_ff));
    }
    switch (cfg.variant) {
      case Variant::ntp:
        m.heads.push_back(OutHead<T>::make(pb, "head.0", d, cfg.v_speech));
        break;
      case Variant::mtp_vocalnet:
        for (int k = 1; k < cfg.n; ++k) {
          m.modules.push_back(DecoderLayer<T>::make(
              pb, "mtp." + std::to_string(k), d, cfg.n_heads, cfg.d_ff));
        }
        for (int k = 0; k < cfg.n; ++k) {
          m.heads.push_back(OutHead<T>::make(pb, "head." + std::to_string(k),
                                             d, cfg.v_speech));
        }
        break;
      case Variant::mtp_parallel:
        for (int k = 0; k < cfg.n; ++k) {
          m.heads.push_back(OutHead<T>::make(pb, "head." + std::to_string(k),
                                             d, cfg.v_speech));
        }
        break;
      case Variant::mtp_deepseek:
        for (int k = 1; k < cfg.n; ++k) {
          m.merges.push_back(
              DeepSeekMerge<T>::make(pb, "merge." + std::to_string(k), d));
          m.modules.push_back(DecoderLayer<T>::make(
              pb, "mtp." + std::to_string(k), d, cfg.n_heads, cfg.d_ff));
        }
        for (int k = 0; k < cfg.n; ++k) {
          m.heads.push_back(OutHead<T>::make(pb, "head." + std::to_string(k),
                                             d, cfg.v_speech));
        }
        break;
      case Variant::group_linear:
        m.compose = Linear<T>::make(pb, "compose", cfg.n * d, d, true);
        m.decompose_linear = OutHead<T>::make(
            pb, "decompose", d, static_cast<int64_t>(cfg.n) * cfg.v_speech);
        break;
      case Variant::group_trans:
        m.compose = Linear<T>::make(pb, "compose", cfg.n * d, d, true);
        m.decompose_queries = pb.matrix("decompose.query", cfg.n, d);
        for (int i = 0; i < 2; ++i) {
          m.decomposer.push_back(
              DecoderLayer<T>::make(pb, "decompose.layer." + std::to_string(i),
                                    d, cfg.n_heads, cfg.d_ff));
        }
        m.decompose_head =
            OutHead<T>::make(pb, "decompose.head", d, cfg.v_speech);
        break;
    }
    return m;
  }

  Tensor<T>* find_param(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return &t;
    return nullptr;
  }

  void zero_grads() {
    for (auto& [n, t] : params) t.zero_grad();
  }

  // -- embedding helpers ----------------------------------------------------

  /// Raw token embeddings; absolute PE (sinusoidal mode) is added separately
  /// at segment-assembly time so composed group rows receive positional
  /// information once, at their own backbone position.
  Tensor<T> embed_tokens(const Tensor<T>& table, const std::vector<int>& ids,
                         int64_t B, int64_t L) const {
    return embedding(table, ids, {B, L});
  }

  Tensor<T> add_abs_pe(const Tensor<T>& x, int64_t B, int64_t L,
                       int pos_offset) const {
    if (cfg.pos_encoding != PosEncoding::sinusoidal) return x;
    const int64_t d = cfg.d_model;
    Tensor<T> pe({B, L, d});
    std::vector<T> row(static_cast<size_t>(d));
    for (int64_t l = 0; l < L; ++l) {
      sinusoidal_pe_row(pos_offset + static_cast<int>(l), d, row.data());
      for (int64_t b = 0; b < B; ++b) {
        std::copy(row.begin(), row.end(),
                  pe.ptr() + (b * L + l) * d);
      }
    }
    return add(x, pe);
  }

  // -- training-path forwards (batched) --------------------------------------

  /// Text conditioning stack: embeddings through the causal projector layers.
  /// ids are padded [B x LT] and must start with BOS per sample.
  Tensor<T> project_text(const std::vector<int>& ids, int64_t B, int64_t LT,
                         const std::vector<int>& lt_per_sample) const {
    auto x = add_abs_pe(embed_tokens(text_embed, ids, B, LT), B, LT, 0);
    std::vector<uint8_t> mask(static_cast<size_t>(B) * LT * LT);
    for (int64_t b = 0; b < B; ++b) {
      auto mb = padded_text_mask(lt_per_sample[static_cast<size_t>(b)],
                                 static_cast<int>(LT));
      std::copy(mb.begin(), mb.end(), mask.begin() + b * LT * LT);
    }
    std::vector<int> positions(static_cast<size_t>(LT));
    for (int64_t i = 0; i < LT; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(i);
    for (const auto& layer : projector) {
      x = layer.forward(x, mask, positions, use_rotary());
    }
    return x;
  }

  /// Convenience single-sample form; tokens must begin with BOS.
  Tensor<T> project_text_one(const std::vector<int>& tokens) const {
    const int lt = static_cast<int>(tokens.size());
    auto v = project_text(tokens, 1, lt, {lt});
    return reshape(v, {static_cast<int64_t>(lt), static_cast<int64_t>(cfg.d_model)});
  }

  /// Backbone over the joint [text | speech] input under the given mask.
  Tensor<T> run_backbone(const Tensor<T>& joint, const std::vector<uint8_t>& mask) const {
    const int64_t L = joint.dim(1);
    std::vector<int> positions(static_cast<size_t>(L));
    for (int64_t i = 0; i < L; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(i);
    Tensor<T> x = joint;
    for (const auto& layer : backbone) {
      x = layer.forward(x, mask, positions, use_rotary());
    }
    return x;
  }

  /// Spec-surface form: project text, embed speech (must begin with SOS),
  /// run the backbone. Single sample, unpadded.
  Tensor<T> backbone_forward_one(const std::vector<int>& text_with_bos,
                                 const std::vector<int>& speech_with_sos,
                                 const std::vector<uint8_t>& mask) const {
    if (speech_with_sos.empty() || speech_with_sos[0] != cfg.sos_id()) {
      throw ContractError("backbone_forward: speech input must begin with SOS");
    }
    const int64_t lt = static_cast<int64_t>(text_with_bos.size());
    const int64_t ls = static_cast<int64_t>(speech_with_sos.size());
    const int64_t L = lt + ls;
    if (static_cast<int64_t>(mask.size()) != L * L) {
      throw ShapeError("backbone_forward: mask of " +
                       std::to_string(mask.size()) + " bytes for length " +
                       std::to_string(L));
    }
    auto v = project_text(text_with_bos, 1, lt, {static_cast<int>(lt)});
    auto s = add_abs_pe(embed_tokens(speech_embed, speech_with_sos, 1, ls), 1,
                        ls, static_cast<int>(lt));
    auto joint = concat(v, s, 1);
    auto h = run_backbone(joint, mask);
    return reshape(h, {L, static_cast<int64_t>(cfg.d_model)});
  }

  /// MTP module chain: [h^0, h^1, ..., h^{depth}] under the backbone's mask.
  std::vector<Tensor<T>> mtp_chain(const Tensor<T>& h0,
                                   const std::vector<uint8_t>& mask,
                                   int depth) const {
    if (cfg.variant != Variant::mtp_vocalnet) {
      throw ConfigError("mtp_chain: variant is " + to_string(cfg.variant));
    }
    if (depth > static_cast<int>(modules.size())) {
      throw ConfigError("mtp_chain: depth " + std::to_string(depth) +
                        " exceeds module count " +
                        std::to_string(modules.size()));
    }
    const int64_t L = h0.dim(1);
    std::vector<int> positions(static_cast<size_t>(L));
    for (int64_t i = 0; i < L; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(i);
    std::vector<Tensor<T>> states{h0};
    for (int k = 0; k < depth; ++k) {
      states.push_back(states.back().defined()
                           ? modules[static_cast<size_t>(k)].forward(
                                 states.back(), mask, positions, use_rotary())
                           : Tensor<T>());
    }
    return states;
  }

  /// DeepSeek-style chain: depth k merges the (ground-truth or predicted)
  /// token embedding stream shifted by k into the previous hidden states.
  /// emb_raw holds raw embeddings of the joint input sequence; it may extend
  /// beyond the backbone length (known future tokens at inference), and any
  /// missing tail is filled with PAD embeddings, whose positions never carry
  /// loss and are never attended from ahead.
  std::vector<Tensor<T>> deepseek_chain(const Tensor<T>& h0,
                                        const Tensor<T>& emb_raw,
                                        const std::vector<uint8_t>& mask,
                                        int depth) const {
    if (cfg.variant != Variant::mtp_deepseek) {
      throw ConfigError("deepseek_chain: variant is " + to_string(cfg.variant));
    }
    if (depth > static_cast<int>(modules.size())) {
      throw ConfigError("deepseek_chain: depth exceeds module count");
    }
    const int64_t B = h0.dim(0);
    const int64_t L = h0.dim(1);
    const int64_t Le = emb_raw.dim(1);
    std::vector<int> positions(static_cast<size_t>(L));
    for (int64_t i = 0; i < L; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(i);
    std::vector<Tensor<T>> states{h0};
    for (int k = 1; k <= depth; ++k) {
      const int64_t have = std::min<int64_t>(L, Le - k);
      auto shifted = narrow(emb_raw, 1, k, have);
      Tensor<T> stream = shifted;
      if (have < L) {
        std::vector<int> pad_ids(static_cast<size_t>(B * (L - have)),
                                 cfg.speech_pad_id());
        auto tail = embed_tokens(speech_embed, pad_ids, B, L - have);
        stream = concat(shifted, tail, 1);
      }
      const auto& mg = merges[static_cast<size_t>(k - 1)];
      auto merged = mg.proj.forward(concat(
          mg.norm_h.forward(states.back()), mg.norm_e.forward(stream), 2));
      states.push_back(modules[static_cast<size_t>(k - 1)].forward(
          merged, mask, positions, use_rotary()));
    }
    return states;
  }

  Tensor<T> head_logits(int k, const Tensor<T>& x) const {
    if (k < 0 || k >= static_cast<int>(heads.size())) {
      throw ConfigError("head_logits: no head " + std::to_string(k));
    }
    return heads[static_cast<size_t>(k)].forward(x);
  }

  /// Group compose: ids [B x G x g] -> [B, G, d] via concat-and-project.
  Tensor<T> compose_groups(const std::vector<int>& ids, int64_t B,
                           int64_t G) const {
    if (!cfg.is_group()) throw ConfigError("compose_groups: not a group variant");
    const int64_t g = cfg.group_size();
    auto emb = embed_tokens(speech_embed, ids, B, G * g);  // [B, G*g, d]
    auto grouped = reshape(emb, {B, G, g * cfg.d_model});
    return compose.forward(grouped);
  }

  /// Group decompose: hidden rows [B, G, d] -> slot logits [B, G, g, V].
  Tensor<T> decompose_groups(const Tensor<T>& h_rows, int64_t B,
                             int64_t G) const {
    const int64_t g = cfg.group_size();
    const int64_t V = cfg.v_speech;
    if (cfg.variant == Variant::group_linear) {
      auto logits = decompose_linear.forward(h_rows);  // [B, G, g*V]
      return reshape(logits, {B, G, g, V});
    }
    if (cfg.variant != Variant::group_trans) {
      throw ConfigError("decompose_groups: not a group variant");
    }
    // [B*G] independent sequences [group_hidden, q_1..q_g] through the
    // non-causal decomposer, logits read at the query positions.
    const int64_t rows = B * G;
    auto h_flat = reshape(h_rows, {rows, int64_t{1}, cfg.d_model});
    auto queries = tile0(decompose_queries, rows);  // [rows, g, d]
    auto seq = concat(h_flat, queries, 1);          // [rows, 1+g, d]
    const int64_t sl = 1 + g;
    std::vector<uint8_t> full_mask(static_cast<size_t>(rows) * sl * sl, 1);
    std::vector<int> positions(static_cast<size_t>(sl));
    for (int64_t i = 0; i < sl; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(i);
    Tensor<T> x = seq;
    for (const auto& layer : decomposer) {
      x = layer.forward(x, full_mask, positions, use_rotary());
    }
    auto slots = narrow(x, 1, 1, g);  // [rows, g, d]
    auto logits = decompose_head.forward(slots);
    return reshape(logits, {B, G, g, V});
  }

  // -- checkpoint I/O ---------------------------------------------------------

  void save(const std::string& path) const {
    ckpt::Writer w(path);
    w.write_header(cfg.to_json(), params.size());
    for (const auto& [name, t] : params) {
      w.write_record(name, std::is_same_v<T, float> ? 0 : 1, t.shape(),
                     reinterpret_cast<const uint8_t*>(t.ptr()),
                     t.data().size() * sizeof(T));
    }
    w.finish();
  }

  static DecoderModel load(const std::string& path) {
    ckpt::Reader r(path);
    const ModelConfig cfg = ModelConfig::from_json(r.config_json());
    if ((cfg.dtype == DtypeTag::f32) != (std::is_same_v<T, float>)) {
      throw FormatError("checkpoint dtype " + to_string(cfg.dtype) +
                        " does not match the requested scalar type");
    }
    DecoderModel m = DecoderModel::init(cfg, /*seed=*/0);
    if (r.record_count() != m.params.size()) {
      throw FormatError("checkpoint carries " +
                        std::to_string(r.record_count()) +
                        " parameters, model expects " +
                        std::to_string(m.params.size()));
    }
    for (auto& [name, t] : m.params) {
      r.read_record_into(name, std::is_same_v<T, float> ? 0 : 1, t.shape(),
                         reinterpret_cast<uint8_t*>(t.ptr()),
                         t.data().size() * sizeof(T));
    }
    r.finish();
    return m;
  }
};

}  // namespace mtpslab
