#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include "doctest.h"
#include "mtpslab/masks.hpp"
#include "mtpslab/rng.hpp"

using namespace mtpslab;
using namespace mtpslab::masks;

TEST_CASE("nonstreaming mask examples") {
  SUBCASE("single BOS") {
    auto m = build_nonstreaming_mask(SequenceLayout(1, 0));
    CHECK(m.n == 1);
    CHECK(m.at(1, 1));
  }
  SUBCASE("L_t=2, L_s=2 rows") {
    auto m = build_nonstreaming_mask(SequenceLayout(2, 2));
    const bool expect[4][4] = {{1, 1, 0, 0}, {1, 1, 0, 0}, {1, 1, 1, 0},
                               {1, 1, 1, 1}};
    for (int i = 1; i <= 4; ++i)
      for (int j = 1; j <= 4; ++j) CHECK(m.at(i, j) == expect[i - 1][j - 1]);
  }
  SUBCASE("first speech position sees last text position") {
    auto m = build_nonstreaming_mask(SequenceLayout(5, 3));
    CHECK(m.at(6, 5));
  }
  SUBCASE("literal variant lets text rows see speech") {
    auto m = build_nonstreaming_mask(SequenceLayout(2, 2),
                                     NonstreamingSemantics::eq2_literal);
    CHECK(m.at(1, 4));
    CHECK(m.at(2, 3));
    auto c = build_nonstreaming_mask(SequenceLayout(2, 2));
    CHECK_FALSE(c.at(1, 4));
  }
}

TEST_CASE("streaming mask examples") {
  SUBCASE("SOS sees only BOS among text") {
    auto m = build_streaming_mask(SequenceLayout(6, 4), ChunkSchedule(3, 2));
    CHECK(m.at(7, 1));
    for (int j = 2; j <= 6; ++j) CHECK_FALSE(m.at(7, j));
    CHECK(m.at(7, 7));  // self
  }
  SUBCASE("L_t=4, C_s=2, C_t=2, i=7 sees text {1,2,3}") {
    auto m = build_streaming_mask(SequenceLayout(4, 4), ChunkSchedule(2, 2));
    CHECK(m.at(7, 1));
    CHECK(m.at(7, 2));
    CHECK(m.at(7, 3));
    CHECK_FALSE(m.at(7, 4));
  }
  SUBCASE("figure configuration C_s=6, C_t=3: chunk 2 sees 7 text columns") {
    // Chunk 2 = speech offsets 8..13 (positions L_t+8 ..), budget 2*3+1 = 7.
    const int lt = 10;
    auto m = build_streaming_mask(SequenceLayout(lt, 20), ChunkSchedule(6, 3));
    const int i = lt + 8;
    for (int j = 1; j <= 7; ++j) CHECK(m.at(i, j));
    CHECK_FALSE(m.at(i, 8));
  }
}

TEST_CASE("mask oracle examples") {
  SequenceLayout layout(4, 4);
  ChunkSchedule sched(2, 2);
  SUBCASE("nonstreaming text row cannot see speech") {
    CHECK_FALSE(mask_oracle(layout, sched, Mode::nonstreaming, 2, 6));
  }
  SUBCASE("streaming text row is causal") {
    CHECK(mask_oracle(layout, sched, Mode::streaming, 3, 2));
    CHECK_FALSE(mask_oracle(layout, sched, Mode::streaming, 2, 3));
  }
  SUBCASE("streaming self-attention on speech") {
    CHECK(mask_oracle(layout, sched, Mode::streaming, 6, 6));
  }
  SUBCASE("out of range throws") {
    CHECK_THROWS_AS(mask_oracle(layout, sched, Mode::streaming, 0, 1),
                    IndexError);
    CHECK_THROWS_AS(mask_oracle(layout, sched, Mode::streaming, 1, 9),
                    IndexError);
  }
}

TEST_CASE("visible text budget") {
  ChunkSchedule sched(15, 5);
  CHECK(visible_text_budget(sched, 1) == 1);
  CHECK(visible_text_budget(sched, 16) == 6);
  SUBCASE("monotone nondecreasing") {
    int prev = 0;
    for (int o = 1; o <= 200; ++o) {
      const int b = visible_text_budget(sched, o);
      CHECK(b >= prev);
      prev = b;
    }
  }
}

TEST_CASE("builders equal the oracle on 1000 random configurations") {
  Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    SequenceLayout layout(static_cast<int>(rng.uniform_int(1, 32)),
                          static_cast<int>(rng.uniform_int(0, 64)));
    ChunkSchedule sched(static_cast<int>(rng.uniform_int(1, 8)),
                        static_cast<int>(rng.uniform_int(1, 8)));
    const auto sem = rng.bernoulli(0.5) ? NonstreamingSemantics::caption
                                        : NonstreamingSemantics::eq2_literal;
    auto ns = build_nonstreaming_mask(layout, sem);
    auto st = build_streaming_mask(layout, sched);
    bool ok = true;
    for (int i = 1; i <= layout.total() && ok; ++i) {
      for (int j = 1; j <= layout.total() && ok; ++j) {
        ok &= ns.at(i, j) ==
              mask_oracle(layout, sched, Mode::nonstreaming, i, j, sem);
        ok &= st.at(i, j) == mask_oracle(layout, sched, Mode::streaming, i, j);
      }
    }
    REQUIRE(ok);
  }
}

TEST_CASE("streaming never exceeds nonstreaming-plus-text-causality") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    SequenceLayout layout(static_cast<int>(rng.uniform_int(1, 16)),
                          static_cast<int>(rng.uniform_int(0, 32)));
    ChunkSchedule sched(static_cast<int>(rng.uniform_int(1, 6)),
                        static_cast<int>(rng.uniform_int(1, 6)));
    auto ns = build_nonstreaming_mask(layout);
    auto st = build_streaming_mask(layout, sched);
    for (int i = layout.lt + 1; i <= layout.total(); ++i) {
      for (int j = layout.lt + 1; j <= layout.total(); ++j) {
        if (st.at(i, j)) CHECK(ns.at(i, j));
      }
    }
  }
}

TEST_CASE("chunk step function") {
  SequenceLayout layout(100, 40);
  ChunkSchedule sched(5, 3);
  auto mask = build_streaming_mask(layout, sched);
  auto text_budget_of_row = [&](int i) {
    int budget = 0;
    for (int j = 1; j <= layout.lt; ++j)
      if (mask.at(i, j)) budget = j;
    return budget;
  };
  // Offset 1 (SOS) is its own chunk; offsets 2..cs+1 share a budget, etc.
  CHECK(text_budget_of_row(layout.lt + 1) == 1);
  int prev_budget = 1;
  for (int chunk = 1; chunk * sched.cs + 1 <= layout.ls; ++chunk) {
    const int first = 2 + (chunk - 1) * sched.cs;
    const int last = std::min(layout.ls, first + sched.cs - 1);
    const int b = text_budget_of_row(layout.lt + first);
    for (int o = first; o <= last; ++o)
      CHECK(text_budget_of_row(layout.lt + o) == b);
    CHECK(b - prev_budget == sched.ct);
    prev_budget = b;
  }
}

TEST_CASE("no future leakage in streaming mode") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    SequenceLayout layout(static_cast<int>(rng.uniform_int(1, 12)),
                          static_cast<int>(rng.uniform_int(0, 24)));
    ChunkSchedule sched(static_cast<int>(rng.uniform_int(1, 5)),
                        static_cast<int>(rng.uniform_int(1, 5)));
    auto st = build_streaming_mask(layout, sched);
    for (int i = 1; i <= layout.total(); ++i) {
      for (int j = i + 1; j <= layout.total(); ++j) {
        if (i <= layout.lt && j <= layout.lt) CHECK_FALSE(st.at(i, j));
        if (j > layout.lt) CHECK_FALSE(st.at(i, j));
      }
    }
  }
}

TEST_CASE("render emits one 0/1 row per line") {
  auto m = build_nonstreaming_mask(SequenceLayout(2, 1));
  CHECK(render(m) == "110\n110\n111\n");
}
