#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtpslab/errors.hpp"

namespace mtpslab::synth {

/// Emitted by decode() for a malformed token segment.
inline constexpr int kDecodeError = -1;

/// Deterministic-plus-noise token language. Each text symbol a at position i
/// expands to a run of fine-grained tokens tok(a, j) = a*R_max + j for
/// j = 0..len-1, with len = 2 + ((a+i) mod 4), extended by one with
/// probability p_ext. The factorized token ids make decoding exact while run
/// lengths stay stochastic, so one semantic unit spans several tokens and a
/// predictor faces genuine uncertainty at run boundaries.
struct SynthGrammar {
  int t_symbols = 16;
  int r_max = 6;
  double p_ext = 0.2;

  int v_core() const { return t_symbols * r_max; }
  int sos() const { return v_core(); }
  int eos() const { return v_core() + 1; }
  int pad() const { return v_core() + 2; }
  /// Speech vocab including the SOS/EOS/PAD specials.
  int v_speech() const { return v_core() + 3; }

  int base_len(int symbol, int index) const {
    return 2 + (symbol + index) % 4;
  }

  std::string to_json() const;
  static SynthGrammar from_json(const std::string& text);
};

struct CorpusRecord {
  int64_t id = 0;
  std::vector<int> text;
  std::vector<int> speech;  // grammar expansion, EOS-terminated
  uint64_t seed = 0;
};

/// Expand text symbols into speech tokens (EOS appended). Deterministic in
/// (grammar, text, seed).
std::vector<int> expand(const SynthGrammar& grammar,
                        const std::vector<int>& text, uint64_t seed);

/// Exact inverse on grammar-generated streams; total on arbitrary streams
/// (malformed segments emit kDecodeError). Stops at the first EOS.
std::vector<int> decode(const SynthGrammar& grammar,
                        const std::vector<int>& speech);

/// Levenshtein distance over symbols divided by max(1, len(reference)).
/// Note the asymmetry: the distance is symmetric, the rate normalizes by the
/// reference length only.
double reconstruction_error(const std::vector<int>& reference,
                            const std::vector<int>& hypothesis);

/// Write n_records line-delimited JSON records after a header line carrying
/// the grammar. Per-record seeds derive from (seed, id), so generation is
/// reproducible and order-independent.
void gen_corpus(const SynthGrammar& grammar, int64_t n_records, int len_lo,
                int len_hi, uint64_t seed, const std::string& path);

std::vector<CorpusRecord> load_corpus(const std::string& path,
                                      SynthGrammar* grammar_out = nullptr);

}  // namespace mtpslab::synth
