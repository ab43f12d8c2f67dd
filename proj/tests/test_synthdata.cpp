#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "mtpslab/rng.hpp"
#include "mtpslab/synthdata.hpp"

using namespace mtpslab;
using namespace mtpslab::synth;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path("/tmp/mtpslab_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("expand hand cases") {
  SynthGrammar g;
  SUBCASE("text [0] at i=0 without extension") {
    // base(0,0) = 2; pick a seed whose first extension draw is false.
    uint64_t seed = 0;
    while (true) {
      Rng probe(seed);
      if (!probe.bernoulli(g.p_ext)) break;
      ++seed;
    }
    auto s = expand(g, {0}, seed);
    CHECK(s == std::vector<int>{0, 1, g.eos()});
  }
  SUBCASE("empty text gives [EOS]") {
    auto s = expand(g, {}, 42);
    CHECK(s == std::vector<int>{g.eos()});
  }
  SUBCASE("same text and seed reproduce exactly") {
    std::vector<int> text{3, 1, 4, 1, 5};
    CHECK(expand(g, text, 9) == expand(g, text, 9));
  }
  SUBCASE("symbol outside alphabet throws") {
    CHECK_THROWS_AS(expand(g, {99}, 1), IndexError);
  }
}

TEST_CASE("decode hand cases") {
  SynthGrammar g;
  SUBCASE("two short runs") {
    CHECK(decode(g, {0, 1, 6, 7}) == std::vector<int>{0, 1});
  }
  SUBCASE("stream beginning mid-run emits the error symbol") {
    auto out = decode(g, {1, 2, 6, 7});
    REQUIRE(out.size() >= 1);
    CHECK(out[0] == kDecodeError);
    CHECK(out.back() == 1);
  }
  SUBCASE("stops at first EOS") {
    CHECK(decode(g, {0, 1, g.eos(), 6, 7}) == std::vector<int>{0});
  }
  SUBCASE("specials inside the stream are malformed") {
    auto out = decode(g, {g.sos(), 0, 1});
    CHECK(out == std::vector<int>{kDecodeError, 0});
  }
  SUBCASE("total on arbitrary garbage") {
    auto out = decode(g, {-5, 1000, 3, 3, 3});
    for (int v : out) CHECK(v == kDecodeError);
  }
}

TEST_CASE("decode(expand(text)) is the identity on 1000 random texts") {
  SynthGrammar g;
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int len = static_cast<int>(rng.uniform_int(0, 24));
    std::vector<int> text(static_cast<size_t>(len));
    for (auto& a : text)
      a = static_cast<int>(rng.uniform_int(0, g.t_symbols - 1));
    const auto speech = expand(g, text, rng.next_u64());
    REQUIRE(decode(g, speech) == text);
  }
}

TEST_CASE("run-length distribution is bimodal at the extension point") {
  SynthGrammar g;
  std::map<size_t, int> counts;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    auto s = expand(g, {4}, static_cast<uint64_t>(i));
    counts[s.size() - 1]++;  // strip EOS
  }
  // base(4,0) = 2 + 4 % 4 = 2; extension adds one with p = 0.2.
  REQUIRE(counts.size() == 2);
  CHECK(counts.count(2) == 1);
  CHECK(counts.count(3) == 1);
  const double p_ext = static_cast<double>(counts[3]) / n;
  CHECK(p_ext > 0.18);
  CHECK(p_ext < 0.22);
}

TEST_CASE("reconstruction error") {
  CHECK(reconstruction_error({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(reconstruction_error({1, 2, 3, 4}, {}) == 1.0);
  CHECK(reconstruction_error({1, 2, 3, 4}, {1, 9, 3, 4}) == 0.25);
  SUBCASE("empty reference normalizes by 1") {
    CHECK(reconstruction_error({}, {5, 6}) == 2.0);
  }
  SUBCASE("distance symmetric, rate asymmetric") {
    std::vector<int> a{1, 2, 3, 4}, b{1, 2};
    CHECK(reconstruction_error(a, b) == 0.5);
    CHECK(reconstruction_error(b, a) == 1.0);
  }
}

TEST_CASE("gen_corpus") {
  SynthGrammar g;
  SUBCASE("n=0 writes only the grammar header") {
    TempFile f("corpus_empty.jsonl");
    gen_corpus(g, 0, 4, 8, 7, f.path);
    const auto text = slurp(f.path);
    CHECK(text == g.to_json() + "\n");
  }
  SUBCASE("same seed twice gives byte-identical files") {
    TempFile f1("corpus_a.jsonl");
    TempFile f2("corpus_b.jsonl");
    gen_corpus(g, 50, 4, 12, 11, f1.path);
    gen_corpus(g, 50, 4, 12, 11, f2.path);
    CHECK(slurp(f1.path) == slurp(f2.path));
  }
  SUBCASE("record lengths honor the range and round-trip") {
    TempFile f("corpus_c.jsonl");
    gen_corpus(g, 100, 3, 9, 5, f.path);
    SynthGrammar loaded;
    auto records = load_corpus(f.path, &loaded);
    CHECK(loaded.t_symbols == g.t_symbols);
    REQUIRE(records.size() == 100);
    for (const auto& rec : records) {
      CHECK(rec.text.size() >= 3);
      CHECK(rec.text.size() <= 9);
      CHECK(decode(g, rec.speech) == rec.text);
      CHECK(rec.speech.back() == g.eos());
    }
  }
  SUBCASE("unwritable path raises IoError") {
    CHECK_THROWS_AS(gen_corpus(g, 1, 1, 2, 1, "/nonexistent/dir/x.jsonl"),
                    IoError);
  }
}
