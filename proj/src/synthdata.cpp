#include "mtpslab/synthdata.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "mtpslab/rng.hpp"

namespace mtpslab::synth {

using nlohmann::json;

std::string SynthGrammar::to_json() const {
  json j;
  j["t_symbols"] = t_symbols;
  j["r_max"] = r_max;
  j["p_ext"] = p_ext;
  return j.dump();
}

SynthGrammar SynthGrammar::from_json(const std::string& text) {
  json j = json::parse(text);
  SynthGrammar g;
  g.t_symbols = j.at("t_symbols").get<int>();
  g.r_max = j.at("r_max").get<int>();
  g.p_ext = j.at("p_ext").get<double>();
  if (g.t_symbols < 1 || g.r_max < 6) {
    throw FormatError("grammar: need t_symbols >= 1 and r_max >= 6");
  }
  return g;
}

std::vector<int> expand(const SynthGrammar& grammar,
                        const std::vector<int>& text, uint64_t seed) {
  // The duration rule reaches runs of 6 (base 5 plus extension); shorter
  // r_max would break tok(a, j) uniqueness.
  if (grammar.r_max < 6) {
    throw ConfigError("expand: r_max must be >= 6 for the duration rule");
  }
  Rng rng(seed);
  std::vector<int> out;
  for (size_t i = 0; i < text.size(); ++i) {
    const int a = text[i];
    if (a < 0 || a >= grammar.t_symbols) {
      throw IndexError("expand: text symbol " + std::to_string(a) +
                       " outside alphabet of " +
                       std::to_string(grammar.t_symbols));
    }
    int len = grammar.base_len(a, static_cast<int>(i));
    if (rng.bernoulli(grammar.p_ext)) ++len;
    for (int j = 0; j < len; ++j) out.push_back(a * grammar.r_max + j);
  }
  out.push_back(grammar.eos());
  return out;
}

std::vector<int> decode(const SynthGrammar& grammar,
                        const std::vector<int>& speech) {
  std::vector<int> out;
  size_t i = 0;
  while (i < speech.size()) {
    const int tok = speech[i];
    if (tok == grammar.eos()) break;
    if (tok < 0 || tok >= grammar.v_core() || tok % grammar.r_max != 0) {
      // Not a run head: swallow one malformed token.
      out.push_back(kDecodeError);
      ++i;
      continue;
    }
    const int a = tok / grammar.r_max;
    size_t j = i + 1;
    int expect = 1;
    while (j < speech.size() && expect < grammar.r_max &&
           speech[j] == a * grammar.r_max + expect) {
      ++j;
      ++expect;
    }
    // Runs shorter than 2 tokens never occur in the grammar.
    out.push_back(expect >= 2 ? a : kDecodeError);
    i = j;
  }
  return out;
}

double reconstruction_error(const std::vector<int>& reference,
                            const std::vector<int>& hypothesis) {
  const size_t nr = reference.size();
  const size_t nh = hypothesis.size();
  std::vector<size_t> prev(nh + 1), cur(nh + 1);
  for (size_t j = 0; j <= nh; ++j) prev[j] = j;
  for (size_t i = 1; i <= nr; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= nh; ++j) {
      const size_t sub =
          prev[j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[nh]) /
         static_cast<double>(std::max<size_t>(1, nr));
}

void gen_corpus(const SynthGrammar& grammar, int64_t n_records, int len_lo,
                int len_hi, uint64_t seed, const std::string& path) {
  if (len_lo < 0 || len_hi < len_lo) {
    throw ConfigError("gen_corpus: bad length range");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("gen_corpus: cannot open " + path);
  out << grammar.to_json() << "\n";
  for (int64_t id = 0; id < n_records; ++id) {
    const uint64_t rec_seed = Rng::mix(seed, static_cast<uint64_t>(id));
    Rng rng(rec_seed);
    const int len = static_cast<int>(rng.uniform_int(len_lo, len_hi));
    std::vector<int> text(static_cast<size_t>(len));
    for (auto& a : text)
      a = static_cast<int>(rng.uniform_int(0, grammar.t_symbols - 1));
    const auto speech = expand(grammar, text, Rng::mix(rec_seed, 0x5eedull));
    json j;
    j["id"] = id;
    j["text"] = text;
    j["speech"] = speech;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("gen_corpus: write failed for " + path);
}

std::vector<CorpusRecord> load_corpus(const std::string& path,
                                      SynthGrammar* grammar_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_corpus: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("load_corpus: missing grammar header in " + path);
  }
  const SynthGrammar grammar = SynthGrammar::from_json(line);
  if (grammar_out) *grammar_out = grammar;
  std::vector<CorpusRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    CorpusRecord rec;
    rec.id = j.at("id").get<int64_t>();
    rec.text = j.at("text").get<std::vector<int>>();
    rec.speech = j.at("speech").get<std::vector<int>>();
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace mtpslab::synth
