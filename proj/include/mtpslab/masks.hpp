#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtpslab/errors.hpp"

namespace mtpslab::masks {

/// Joint sequence layout, 1-based to mirror the mask formulas:
/// position 1 is BOS, positions 2..L_t are text hidden states, position
/// L_t+1 is SOS, positions L_t+2..L_t+L_s are speech tokens.
struct SequenceLayout {
  int lt = 1;  // text-segment length in positions (>= 1, includes BOS)
  int ls = 0;  // speech-segment length in positions (>= 0, includes SOS)

  SequenceLayout() = default;
  SequenceLayout(int lt_, int ls_) : lt(lt_), ls(ls_) {
    if (lt < 1) throw ConfigError("SequenceLayout: L_t must be >= 1");
    if (ls < 0) throw ConfigError("SequenceLayout: L_s must be >= 0");
  }
  int total() const { return lt + ls; }
};

/// Streaming chunk schedule: each speech chunk of C_s positions unlocks C_t
/// additional text positions (beyond BOS).
struct ChunkSchedule {
  int cs = 15;
  int ct = 5;

  ChunkSchedule() = default;
  ChunkSchedule(int cs_, int ct_) : cs(cs_), ct(ct_) {
    if (cs < 1 || ct < 1) throw ConfigError("ChunkSchedule: C_s and C_t must be >= 1");
  }
};

/// Visibility matrix: bits[i][j] == "position i may attend to position j",
/// 1-based accessors.
struct AttnMask {
  int n = 0;
  std::vector<uint8_t> bits;  // row-major n*n

  AttnMask() = default;
  explicit AttnMask(int n_) : n(n_), bits(static_cast<size_t>(n_) * n_, 0) {}

  bool at(int i, int j) const {
    return bits[static_cast<size_t>(i - 1) * n + (j - 1)] != 0;
  }
  void set(int i, int j, bool v) {
    bits[static_cast<size_t>(i - 1) * n + (j - 1)] = v ? 1 : 0;
  }
};

enum class Mode { nonstreaming, streaming };

/// The printed non-streaming equation gives text rows visibility over ALL
/// columns, speech included, which leaks targets under teacher forcing; the
/// figure caption restricts text rows to text columns. `caption` is the
/// default; `literal` reproduces the printed form for comparison.
enum class NonstreamingSemantics { caption, eq2_literal };

/// Text budget for a speech position: ceil((offset-1)/C_s) * C_t + 1, where
/// offset is the 1-based position within the speech segment (SOS = 1).
/// Uncapped; callers cap at L_t.
int visible_text_budget(const ChunkSchedule& sched, int speech_pos_offset);

AttnMask build_nonstreaming_mask(
    const SequenceLayout& layout,
    NonstreamingSemantics sem = NonstreamingSemantics::caption);

AttnMask build_streaming_mask(const SequenceLayout& layout,
                              const ChunkSchedule& sched);

/// Independent per-entry predicate: a literal transcription of the mask
/// definitions, coded separately from the builders so the two can be checked
/// against each other. 1-based i, j.
bool mask_oracle(const SequenceLayout& layout, const ChunkSchedule& sched,
                 Mode mode, int i, int j,
                 NonstreamingSemantics sem = NonstreamingSemantics::caption);

/// Render as a 0/1 grid, one row per line (the `masks print` CLI output).
std::string render(const AttnMask& mask);

}  // namespace mtpslab::masks
