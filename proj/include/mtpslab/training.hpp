#pragma once

#include <chrono>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "mtpslab/model.hpp"
#include "mtpslab/optim.hpp"
#include "mtpslab/synthdata.hpp"

namespace mtpslab::train {

struct TrainConfig {
  double lr = 2e-4;
  double warmup_ratio = 0.03;
  int64_t total_steps = 5000;
  int batch_size = 8;
  uint64_t seed = 1;
  int64_t eval_every = 1000;
  std::string checkpoint_dir;  // empty disables checkpointing
  double grad_clip = 1.0;

  void validate() const {
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
      throw ConfigError("train: warmup_ratio must lie in [0, 1)");
    }
    if (total_steps < 1 || batch_size < 1) {
      throw ConfigError("train: total_steps and batch_size must be >= 1");
    }
  }
};

/// Linear warmup over the first warmup_ratio * total_steps, then cosine decay
/// from lr to 0.01 * lr at total_steps.
inline double lr_at(const TrainConfig& tc, int64_t step) {
  if (step < 0 || step > tc.total_steps) {
    throw ConfigError("lr_at: step outside [0, total_steps]");
  }
  const int64_t warmup = static_cast<int64_t>(
      std::llround(tc.warmup_ratio * static_cast<double>(tc.total_steps)));
  if (warmup > 0 && step < warmup) {
    return tc.lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double lr_min = 0.01 * tc.lr;
  const double span = static_cast<double>(tc.total_steps - warmup);
  const double progress =
      span > 0 ? static_cast<double>(step - warmup) / span : 1.0;
  return lr_min + 0.5 * (tc.lr - lr_min) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

/// A padded training batch. Token-level variants use speech_in_ids and one
/// target stream per head depth; group variants use group rows (SOS plus
/// composed groups) with per-slot targets. PAD positions carry ignore_index
/// targets and are isolated by the joint mask.
struct Batch {
  int64_t B = 0;
  int64_t LT = 0;  // padded text positions (incl. BOS)
  int64_t LS = 0;  // padded speech rows (incl. SOS); group rows for group variants
  std::vector<int> lt;  // per-sample real text positions
  std::vector<int> ls;  // per-sample real speech rows
  std::vector<masks::Mode> modes;
  std::vector<int> text_ids;              // B*LT
  std::vector<int> speech_in_ids;         // B*LS (token-level)
  std::vector<int> group_in_ids;          // B*(LS-1)*g (group variants)
  std::vector<std::vector<int>> head_targets;  // per depth: B*LS
  std::vector<int> group_targets;         // B*LS*g
  std::vector<uint8_t> joint_mask;        // B*(LT+LS)^2
};

inline Batch assemble_batch(const ModelConfig& cfg,
                            const std::vector<synth::CorpusRecord>& corpus,
                            const std::vector<size_t>& indices,
                            const std::vector<masks::Mode>& modes) {
  Batch batch;
  batch.B = static_cast<int64_t>(indices.size());
  batch.modes = modes;
  const masks::ChunkSchedule sched(cfg.cs, cfg.ct);
  const int g = cfg.is_group() ? cfg.group_size() : 1;

  for (size_t bi = 0; bi < indices.size(); ++bi) {
    const auto& rec = corpus[indices[bi]];
    const int lt = 1 + static_cast<int>(rec.text.size());
    const int m = static_cast<int>(rec.speech.size());  // targets incl. EOS
    const int ls = cfg.is_group() ? (m + g - 1) / g : m;
    batch.lt.push_back(lt);
    batch.ls.push_back(ls);
    batch.LT = std::max<int64_t>(batch.LT, lt);
    batch.LS = std::max<int64_t>(batch.LS, ls);
  }

  const int64_t B = batch.B, LT = batch.LT, LS = batch.LS;
  const int64_t L = LT + LS;
  batch.text_ids.assign(static_cast<size_t>(B) * LT, cfg.text_pad_id());
  batch.joint_mask.assign(static_cast<size_t>(B) * L * L, 0);
  if (cfg.is_group()) {
    batch.group_in_ids.assign(static_cast<size_t>(B) * (LS - 1) * g,
                              cfg.speech_pad_id());
    batch.group_targets.assign(static_cast<size_t>(B) * LS * g, kIgnoreIndex);
  } else {
    batch.speech_in_ids.assign(static_cast<size_t>(B) * LS,
                               cfg.speech_pad_id());
    batch.head_targets.assign(static_cast<size_t>(cfg.n),
                              std::vector<int>(static_cast<size_t>(B) * LS,
                                               kIgnoreIndex));
  }

  for (size_t bi = 0; bi < indices.size(); ++bi) {
    const auto& rec = corpus[indices[bi]];
    const int lt = batch.lt[bi];
    const int ls = batch.ls[bi];
    const int m = static_cast<int>(rec.speech.size());
    int* text_row = batch.text_ids.data() + static_cast<int64_t>(bi) * LT;
    text_row[0] = cfg.bos_id();
    for (size_t i = 0; i < rec.text.size(); ++i) text_row[1 + i] = rec.text[i];

    if (cfg.is_group()) {
      // Input rows: SOS then ls-1 composed groups over s_1..s_{(ls-1)*g}.
      int* gin = batch.group_in_ids.data() +
                 static_cast<int64_t>(bi) * (LS - 1) * g;
      for (int grp = 0; grp + 1 < ls; ++grp) {
        for (int slot = 0; slot < g; ++slot) {
          const int ti = grp * g + slot;
          if (ti < m - 1) gin[grp * g + slot] = rec.speech[static_cast<size_t>(ti)];
        }
      }
      int* gt = batch.group_targets.data() + static_cast<int64_t>(bi) * LS * g;
      for (int row = 0; row < ls; ++row) {
        for (int slot = 0; slot < g; ++slot) {
          const int ti = row * g + slot;
          if (ti < m) gt[row * g + slot] = rec.speech[static_cast<size_t>(ti)];
        }
      }
      const auto mb = padded_group_joint_mask(lt, ls, static_cast<int>(LT),
                                              static_cast<int>(LS),
                                              modes[bi], sched, g);
      std::copy(mb.begin(), mb.end(),
                batch.joint_mask.begin() + static_cast<int64_t>(bi) * L * L);
    } else {
      int* sin = batch.speech_in_ids.data() + static_cast<int64_t>(bi) * LS;
      sin[0] = cfg.sos_id();
      for (int t = 1; t < ls; ++t) sin[t] = rec.speech[static_cast<size_t>(t - 1)];
      for (int k = 0; k < cfg.n; ++k) {
        int* tgt = batch.head_targets[static_cast<size_t>(k)].data() +
                   static_cast<int64_t>(bi) * LS;
        for (int t = 0; t + k < m; ++t) tgt[t] = rec.speech[static_cast<size_t>(t + k)];
      }
      const auto mb = padded_joint_mask(lt, ls, static_cast<int>(LT),
                                        static_cast<int>(LS), modes[bi], sched);
      std::copy(mb.begin(), mb.end(),
                batch.joint_mask.begin() + static_cast<int64_t>(bi) * L * L);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

template <typename T>
struct LossOut {
  Tensor<T> total;
  std::vector<double> per_head_ce;
  int64_t backbone_len = 0;
};

namespace detail {

/// Shared tail of every token-level loss: per-depth speech-row logits scored
/// against that depth's shifted targets; depth 0 enters the total unscaled so
/// an N=1 model reproduces the plain next-token loss bit for bit.
template <typename T>
LossOut<T> weighted_head_losses(const DecoderModel<T>& model,
                                const std::vector<Tensor<T>>& states,
                                const Batch& batch) {
  const auto& cfg = model.cfg;
  LossOut<T> out;
  out.backbone_len = batch.LT + batch.LS;
  Tensor<T> total;
  for (size_t k = 0; k < states.size(); ++k) {
    auto rows = narrow(states[k], 1, batch.LT, batch.LS);
    auto logits = model.head_logits(static_cast<int>(k), rows);
    auto ce = cross_entropy(logits, batch.head_targets[k], kIgnoreIndex);
    out.per_head_ce.push_back(static_cast<double>(ce.item()));
    if (k == 0) {
      total = ce;
    } else {
      total = add(total, scale(ce, std::pow(cfg.lambda, static_cast<double>(k))));
    }
  }
  out.total = total;
  return out;
}

template <typename T>
Tensor<T> joint_input(const DecoderModel<T>& model, const Batch& batch,
                      Tensor<T>* emb_raw_out = nullptr) {
  auto v = model.project_text(batch.text_ids, batch.B, batch.LT, batch.lt);
  auto s_raw = model.embed_tokens(model.speech_embed, batch.speech_in_ids,
                                  batch.B, batch.LS);
  if (emb_raw_out) {
    auto t_raw = model.embed_tokens(model.text_embed, batch.text_ids, batch.B,
                                    batch.LT);
    *emb_raw_out = concat(t_raw, s_raw, 1);
  }
  auto s = model.add_abs_pe(s_raw, batch.B, batch.LS, static_cast<int>(batch.LT));
  return concat(v, s, 1);
}

}  // namespace detail

template <typename T>
LossOut<T> ntp_loss(const DecoderModel<T>& model, const Batch& batch) {
  if (model.cfg.variant != Variant::ntp) {
    throw ConfigError("ntp_loss: variant is " + to_string(model.cfg.variant));
  }
  auto h0 = model.run_backbone(detail::joint_input(model, batch),
                               batch.joint_mask);
  return detail::weighted_head_losses(model, {h0}, batch);
}

template <typename T>
LossOut<T> mtp_loss(const DecoderModel<T>& model, const Batch& batch) {
  if (model.cfg.variant != Variant::mtp_vocalnet) {
    throw ConfigError("mtp_loss: variant is " + to_string(model.cfg.variant));
  }
  auto h0 = model.run_backbone(detail::joint_input(model, batch),
                               batch.joint_mask);
  auto states = model.mtp_chain(h0, batch.joint_mask, model.cfg.n - 1);
  return detail::weighted_head_losses(model, states, batch);
}

template <typename T>
LossOut<T> parallel_loss(const DecoderModel<T>& model, const Batch& batch) {
  if (model.cfg.variant != Variant::mtp_parallel) {
    throw ConfigError("parallel_loss: variant is " +
                      to_string(model.cfg.variant));
  }
  auto h0 = model.run_backbone(detail::joint_input(model, batch),
                               batch.joint_mask);
  std::vector<Tensor<T>> states(static_cast<size_t>(model.cfg.n), h0);
  return detail::weighted_head_losses(model, states, batch);
}

template <typename T>
LossOut<T> deepseek_loss(const DecoderModel<T>& model, const Batch& batch) {
  if (model.cfg.variant != Variant::mtp_deepseek) {
    throw ConfigError("deepseek_loss: variant is " +
                      to_string(model.cfg.variant));
  }
  Tensor<T> emb_raw;
  auto h0 = model.run_backbone(detail::joint_input(model, batch, &emb_raw),
                               batch.joint_mask);
  auto states =
      model.deepseek_chain(h0, emb_raw, batch.joint_mask, model.cfg.n - 1);
  return detail::weighted_head_losses(model, states, batch);
}

template <typename T>
LossOut<T> group_loss(const DecoderModel<T>& model, const Batch& batch) {
  if (!model.cfg.is_group()) {
    throw ConfigError("group_loss: variant is " + to_string(model.cfg.variant));
  }
  const auto& cfg = model.cfg;
  auto v = model.project_text(batch.text_ids, batch.B, batch.LT, batch.lt);
  std::vector<int> sos_ids(static_cast<size_t>(batch.B), cfg.sos_id());
  auto sos = model.embed_tokens(model.speech_embed, sos_ids, batch.B, 1);
  Tensor<T> speech_seg;
  if (batch.LS > 1) {
    auto composed = model.compose_groups(batch.group_in_ids, batch.B,
                                         batch.LS - 1);
    speech_seg = concat(sos, composed, 1);
  } else {
    speech_seg = sos;
  }
  speech_seg = model.add_abs_pe(speech_seg, batch.B, batch.LS,
                                static_cast<int>(batch.LT));
  auto h0 = model.run_backbone(concat(v, speech_seg, 1), batch.joint_mask);
  auto rows = narrow(h0, 1, batch.LT, batch.LS);
  auto logits = model.decompose_groups(rows, batch.B, batch.LS);
  auto ce = cross_entropy(logits, batch.group_targets, kIgnoreIndex);
  LossOut<T> out;
  out.total = ce;
  out.per_head_ce.push_back(static_cast<double>(ce.item()));
  out.backbone_len = batch.LT + batch.LS;
  return out;
}

template <typename T>
LossOut<T> compute_loss(const DecoderModel<T>& model, const Batch& batch) {
  switch (model.cfg.variant) {
    case Variant::ntp: return ntp_loss(model, batch);
    case Variant::mtp_vocalnet: return mtp_loss(model, batch);
    case Variant::mtp_parallel: return parallel_loss(model, batch);
    case Variant::mtp_deepseek: return deepseek_loss(model, batch);
    case Variant::group_linear:
    case Variant::group_trans: return group_loss(model, batch);
  }
  throw ConfigError("compute_loss: unknown variant");
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<double> ce_heads;
  int64_t backbone_len = 0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::string final_checkpoint;
};

inline void write_log_header(std::ostream& os, int n_heads) {
  os << "step,lr,loss";
  for (int k = 0; k < n_heads; ++k) os << ",ce_head_" << k;
  os << ",backbone_len,wall_ms\n";
}

inline void write_log_row(std::ostream& os, const TrainLogRow& row) {
  os << row.step << "," << row.lr << "," << row.loss;
  for (double ce : row.ce_heads) os << "," << ce;
  os << "," << row.backbone_len << "," << row.wall_ms << "\n";
}

template <typename T>
double clip_global_norm(std::vector<std::pair<std::string, Tensor<T>>>& params,
                        double max_norm) {
  double ss = 0.0;
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (T gv : p.grad()) {
      const double g = static_cast<double>(gv);
      ss += g * g;
    }
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (T& gv : p.grad()) gv *= s;
    }
  }
  return norm;
}

/// Stage-two training: sample a batch, draw per-sample mask modes, compute
/// the variant loss, step the schedule. Deterministic per seed; non-finite
/// loss aborts with the step number.
template <typename T>
TrainResult train(DecoderModel<T>& model,
                  const std::vector<synth::CorpusRecord>& corpus,
                  const TrainConfig& tc, std::ostream* csv = nullptr) {
  tc.validate();
  if (corpus.empty()) throw ConfigError("train: empty corpus");
  const int n_heads = model.cfg.is_group() ? 1 : model.cfg.n;
  if (csv) write_log_header(*csv, n_heads);

  AdamState<T> adam;
  adam.init(model.params);
  Rng rng(Rng::mix(tc.seed, Rng::hash_str("train")));
  TrainResult result;

  for (int64_t step = 0; step < tc.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<size_t> indices(static_cast<size_t>(tc.batch_size));
    std::vector<masks::Mode> modes(static_cast<size_t>(tc.batch_size));
    for (int i = 0; i < tc.batch_size; ++i) {
      indices[static_cast<size_t>(i)] = static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(corpus.size()) - 1));
      modes[static_cast<size_t>(i)] = rng.bernoulli(model.cfg.mask_mode_mix)
                                          ? masks::Mode::streaming
                                          : masks::Mode::nonstreaming;
    }
    const Batch batch = assemble_batch(model.cfg, corpus, indices, modes);

    TrainLogRow row;
    row.step = step;
    row.lr = lr_at(tc, step);
    {
      Tape<T> tape;
      const LossOut<T> loss = compute_loss(model, batch);
      const double lv = static_cast<double>(loss.total.item());
      if (!std::isfinite(lv)) {
        throw NumericError("train: non-finite loss at step " +
                           std::to_string(step));
      }
      row.loss = lv;
      row.ce_heads = loss.per_head_ce;
      row.backbone_len = loss.backbone_len;
      tape.backward(loss.total);
    }
    clip_global_norm(model.params, tc.grad_clip);
    adam_step(adam, model.params, row.lr);
    model.zero_grads();

    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    if (csv) write_log_row(*csv, row);
    result.log.push_back(std::move(row));

    if (!tc.checkpoint_dir.empty() && tc.eval_every > 0 &&
        (step + 1) % tc.eval_every == 0 && step + 1 < tc.total_steps) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "step_%06lld.ckpt",
                    static_cast<long long>(step + 1));
      model.save(tc.checkpoint_dir + "/" + buf);
    }
  }
  if (!tc.checkpoint_dir.empty()) {
    result.final_checkpoint = tc.checkpoint_dir + "/final.ckpt";
    model.save(result.final_checkpoint);
  }
  return result;
}

}  // namespace mtpslab::train
