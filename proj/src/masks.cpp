#include "mtpslab/masks.hpp"

#include <algorithm>

namespace mtpslab::masks {

int visible_text_budget(const ChunkSchedule& sched, int speech_pos_offset) {
  if (speech_pos_offset < 1) {
    throw ConfigError("visible_text_budget: offset must be >= 1");
  }
  const int chunk = (speech_pos_offset - 1 + sched.cs - 1) / sched.cs;
  return chunk * sched.ct + 1;
}

AttnMask build_nonstreaming_mask(const SequenceLayout& layout,
                                 NonstreamingSemantics sem) {
  const int lt = layout.lt;
  const int n = layout.total();
  AttnMask mask(n);
  // Text rows: full visibility within the text block (caption semantics), or
  // over everything under the literal printed form.
  for (int i = 1; i <= lt; ++i) {
    const int hi = (sem == NonstreamingSemantics::eq2_literal) ? n : lt;
    for (int j = 1; j <= hi; ++j) mask.set(i, j, true);
  }
  // Speech rows: all text plus causal speech.
  for (int i = lt + 1; i <= n; ++i) {
    for (int j = 1; j <= lt; ++j) mask.set(i, j, true);
    for (int j = lt + 1; j <= i; ++j) mask.set(i, j, true);
  }
  return mask;
}

AttnMask build_streaming_mask(const SequenceLayout& layout,
                              const ChunkSchedule& sched) {
  const int lt = layout.lt;
  const int n = layout.total();
  AttnMask mask(n);
  // Text rows: causal.
  for (int i = 1; i <= lt; ++i) {
    for (int j = 1; j <= i; ++j) mask.set(i, j, true);
  }
  // Speech rows: causal speech plus the chunk-limited text prefix.
  for (int i = lt + 1; i <= n; ++i) {
    const int budget = std::min(lt, visible_text_budget(sched, i - lt));
    for (int j = 1; j <= budget; ++j) mask.set(i, j, true);
    for (int j = lt + 1; j <= i; ++j) mask.set(i, j, true);
  }
  return mask;
}

bool mask_oracle(const SequenceLayout& layout, const ChunkSchedule& sched,
                 Mode mode, int i, int j, NonstreamingSemantics sem) {
  const int lt = layout.lt;
  const int n = layout.total();
  if (i < 1 || j < 1 || i > n || j > n) {
    throw IndexError("mask_oracle: index (" + std::to_string(i) + ", " +
                     std::to_string(j) + ") outside 1.." + std::to_string(n));
  }
  if (mode == Mode::nonstreaming) {
    if (sem == NonstreamingSemantics::eq2_literal) {
      if (i <= lt) return true;
      if (i > lt && i >= j) return true;
      return false;
    }
    // Caption semantics: a text position attends to itself and all text
    // positions; a speech position attends to itself, all text positions,
    // and its previous speech positions.
    if (i <= lt) return j <= lt;
    return j <= lt || (j > lt && j <= i);
  }
  // Streaming, the three printed cases.
  if (i <= lt && i >= j) return true;
  if (i > lt && i >= j && j > lt) return true;
  if (i > lt) {
    const int ceil_term = (i - lt - 1 + sched.cs - 1) / sched.cs;
    if (j <= std::min(lt, ceil_term * sched.ct + 1)) return true;
  }
  return false;
}

std::string render(const AttnMask& mask) {
  std::string out;
  out.reserve(static_cast<size_t>(mask.n) * (mask.n + 1));
  for (int i = 1; i <= mask.n; ++i) {
    for (int j = 1; j <= mask.n; ++j) out.push_back(mask.at(i, j) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

}  // namespace mtpslab::masks
