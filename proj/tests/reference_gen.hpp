#pragma once

// Test-only generation oracle: every head emission rebuilds the entire
// forward through the batched training-path ops, with masks taken straight
// from the oracle-checked builders. No incremental caches are involved, so
// it is an independent check of the engine's cached path.

#include <vector>

#include "mtpslab/inference.hpp"
#include "mtpslab/model.hpp"

namespace refgen {

using namespace mtpslab;

struct RefOut {
  std::vector<int> tokens;  // includes terminal EOS when stopped at EOS
  std::vector<std::vector<double>> logits;
  int64_t blocks = 0;
};

template <typename T>
Tensor<T> full_h0(const DecoderModel<T>& model, const std::vector<int>& text_ids,
                  const std::vector<int>& speech_ids,
                  const std::vector<uint8_t>& mask) {
  const int64_t lt = static_cast<int64_t>(text_ids.size());
  const int64_t ls = static_cast<int64_t>(speech_ids.size());
  auto v = model.project_text(text_ids, 1, lt, {static_cast<int>(lt)});
  auto s = model.add_abs_pe(
      model.embed_tokens(model.speech_embed, speech_ids, 1, ls), 1, ls,
      static_cast<int>(lt));
  return model.run_backbone(concat(v, s, 1), mask);
}

template <typename T>
std::vector<double> last_row_logits_head(const DecoderModel<T>& model, int k,
                                         const Tensor<T>& state) {
  const int64_t L = state.dim(1);
  auto row = narrow(state, 1, L - 1, 1);
  auto logits = model.head_logits(k, row);
  return std::vector<double>(logits.data().begin(), logits.data().end());
}

template <typename T>
RefOut reference_generate(const DecoderModel<T>& model,
                          const std::vector<int>& text,
                          const infer::DecodeConfig& cfg) {
  const auto& mc = model.cfg;
  const masks::ChunkSchedule sched(cfg.cs, cfg.ct);
  const auto mode =
      cfg.streaming ? masks::Mode::streaming : masks::Mode::nonstreaming;
  std::vector<int> text_ids{mc.bos_id()};
  text_ids.insert(text_ids.end(), text.begin(), text.end());
  const int lt = static_cast<int>(text_ids.size());

  RefOut out;
  std::vector<int> committed;  // tokens whose rows the backbone has consumed
  bool stopped = false;

  while (!stopped &&
         static_cast<int>(out.tokens.size()) < cfg.max_speech_tokens) {
    ++out.blocks;
    if (mc.is_group()) {
      const int g = mc.group_size();
      const int n_groups = static_cast<int>(committed.size()) / g;
      const int ls = 1 + n_groups;
      auto mask = padded_group_joint_mask(lt, ls, lt, ls, mode, sched, g);
      auto v = model.project_text(text_ids, 1, lt, {lt});
      std::vector<int> sos{mc.sos_id()};
      auto seg = model.embed_tokens(model.speech_embed, sos, 1, 1);
      if (n_groups > 0) {
        auto composed = model.compose_groups(committed, 1, n_groups);
        seg = concat(seg, composed, 1);
      }
      seg = model.add_abs_pe(seg, 1, ls, lt);
      auto h0 = model.run_backbone(concat(v, seg, 1), mask);
      auto row = narrow(h0, 1, lt + ls - 1, 1);
      auto slot_logits = model.decompose_groups(row, 1, 1);  // [1,1,g,V]
      for (int slot = 0; slot < g && !stopped &&
                         static_cast<int>(out.tokens.size()) <
                             cfg.max_speech_tokens;
           ++slot) {
        std::vector<double> lrow(
            slot_logits.data().begin() + static_cast<int64_t>(slot) * mc.v_speech,
            slot_logits.data().begin() +
                static_cast<int64_t>(slot + 1) * mc.v_speech);
        int best = 0;
        for (int j = 1; j < mc.v_speech; ++j)
          if (lrow[static_cast<size_t>(j)] > lrow[static_cast<size_t>(best)])
            best = j;
        out.logits.push_back(lrow);
        out.tokens.push_back(best);
        if (best == mc.eos_id() && !cfg.ignore_eos) stopped = true;
      }
      if (!stopped) {
        committed.insert(committed.end(), out.tokens.end() - g,
                         out.tokens.end());
      }
    } else {
      const int ls = 1 + static_cast<int>(committed.size());
      auto mask = padded_joint_mask(lt, ls, lt, ls, mode, sched);
      std::vector<int> speech_ids{mc.sos_id()};
      speech_ids.insert(speech_ids.end(), committed.begin(), committed.end());
      auto h0 = full_h0(model, text_ids, speech_ids, mask);
      std::vector<int> block;
      for (int k = 0; k < cfg.m && !stopped &&
                      static_cast<int>(out.tokens.size()) <
                          cfg.max_speech_tokens;
           ++k) {
        std::vector<double> lrow;
        if (mc.variant == Variant::mtp_vocalnet) {
          auto states = model.mtp_chain(h0, mask, k);
          lrow = last_row_logits_head(model, k, states.back());
        } else if (mc.variant == Variant::mtp_deepseek) {
          // Embedding stream over everything known right now, including the
          // tokens emitted earlier in this block.
          std::vector<int> known = speech_ids;
          known.insert(known.end(), block.begin(), block.end());
          auto t_raw = model.embed_tokens(model.text_embed, text_ids, 1, lt);
          auto s_raw = model.embed_tokens(model.speech_embed, known, 1,
                                          static_cast<int64_t>(known.size()));
          auto emb_ext = concat(t_raw, s_raw, 1);
          auto states = model.deepseek_chain(h0, emb_ext, mask, k);
          lrow = last_row_logits_head(model, k, states.back());
        } else {
          lrow = last_row_logits_head(model, k, h0);
        }
        int best = 0;
        for (size_t j = 1; j < lrow.size(); ++j)
          if (lrow[j] > lrow[static_cast<size_t>(best)]) best = static_cast<int>(j);
        out.logits.push_back(lrow);
        out.tokens.push_back(best);
        block.push_back(best);
        if (best == mc.eos_id() && !cfg.ignore_eos) stopped = true;
      }
      if (!stopped) {
        committed.insert(committed.end(), block.begin(), block.end());
      }
    }
  }
  return out;
}

}  // namespace refgen
