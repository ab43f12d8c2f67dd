#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cmath>

#include "doctest.h"
#include "mtpslab/inference.hpp"
#include "mtpslab/model.hpp"
#include "mtpslab/training.hpp"
#include "reference_gen.hpp"

using namespace mtpslab;
using infer::DecodeConfig;
using infer::Engine;

namespace {

ModelConfig inf_cfg(Variant v, int n, DtypeTag dt = DtypeTag::f64) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_backbone_layers = 2;
  c.n_projector_layers = 1;
  c.variant = v;
  c.n = n;
  c.dtype = dt;
  return c;
}

std::vector<int> rand_text(Rng& rng, int lo, int hi, int vocab = 16) {
  std::vector<int> t(static_cast<size_t>(rng.uniform_int(lo, hi)));
  for (auto& x : t) x = static_cast<int>(rng.uniform_int(0, vocab - 1));
  return t;
}

}  // namespace

TEST_CASE("cached generation equals full recompute for every variant") {
  Rng rng(404);
  const struct {
    Variant v;
    int n, m;
  } cases[] = {
      {Variant::ntp, 1, 1},          {Variant::mtp_vocalnet, 3, 3},
      {Variant::mtp_vocalnet, 3, 2}, {Variant::mtp_parallel, 3, 3},
      {Variant::mtp_deepseek, 3, 3}, {Variant::group_linear, 3, 3},
      {Variant::group_trans, 2, 2},
  };
  for (const auto& tc : cases) {
    auto model = DecoderModel<double>::init(inf_cfg(tc.v, tc.n),
                                            900 + static_cast<uint64_t>(tc.n));
    for (int trial = 0; trial < 4; ++trial) {
      const auto text = rand_text(rng, 1, 6);
      DecodeConfig cfg;
      cfg.m = tc.m;
      cfg.max_speech_tokens = 17;
      cfg.ignore_eos = true;

      Engine<double> eng(model);
      std::vector<std::vector<double>> got_logits;
      eng.set_logit_capture(&got_logits);
      const auto rep = eng.generate(text, cfg);

      const auto ref = refgen::reference_generate(model, text, cfg);
      INFO("variant ", to_string(tc.v), " m=", tc.m, " trial ", trial);
      REQUIRE(rep.tokens == ref.tokens);
      REQUIRE(got_logits.size() == ref.logits.size());
      for (size_t i = 0; i < got_logits.size(); ++i) {
        for (size_t j = 0; j < got_logits[i].size(); ++j) {
          CHECK(std::abs(got_logits[i][j] - ref.logits[i][j]) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("cached generation matches full recompute at f32 within 1e-5") {
  Rng rng(405);
  auto model = DecoderModel<float>::init(
      inf_cfg(Variant::mtp_vocalnet, 3, DtypeTag::f32), 77);
  const auto text = rand_text(rng, 2, 5);
  DecodeConfig cfg;
  cfg.m = 3;
  cfg.max_speech_tokens = 12;
  cfg.ignore_eos = true;
  Engine<float> eng(model);
  std::vector<std::vector<double>> got_logits;
  eng.set_logit_capture(&got_logits);
  eng.generate(text, cfg);
  const auto ref = refgen::reference_generate(model, text, cfg);
  REQUIRE(got_logits.size() == ref.logits.size());
  for (size_t i = 0; i < got_logits.size(); ++i) {
    for (size_t j = 0; j < got_logits[i].size(); ++j) {
      CHECK(std::abs(got_logits[i][j] - ref.logits[i][j]) < 1e-5);
    }
  }
}

TEST_CASE("layer extend: incremental equals one-shot forward") {
  Rng rng(55);
  const int64_t d = 16, L = 9;
  std::vector<std::pair<std::string, Tensor<double>>> reg;
  ParamBuilder<double> pb(3, &reg);
  auto layer = DecoderLayer<double>::make(pb, "l", d, 2, 24);

  auto x = Tensor<double>::randn({1, L, d}, rng, 1.0);
  std::vector<uint8_t> mask(static_cast<size_t>(L * L), 0);
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j <= i; ++j) mask[static_cast<size_t>(i * L + j)] = 1;
  std::vector<int> positions(static_cast<size_t>(L));
  for (int64_t i = 0; i < L; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(i);
  auto full = layer.forward(x, mask, positions, true);

  SUBCASE("extend by one, L times") {
    LayerCache<double> cache;
    cache.reset(2, 8, 16);
    InferWorkspace<double> ws;
    for (int64_t i = 0; i < L; ++i) {
      std::vector<double> row(x.ptr() + i * d, x.ptr() + (i + 1) * d);
      const int pos = static_cast<int>(i);
      const Visibility vis = Visibility::prefix(pos + 1);
      layer.extend(cache, row.data(), 1, &pos, &vis, true, ws);
      for (int64_t j = 0; j < d; ++j) {
        CHECK(std::abs(row[static_cast<size_t>(j)] - full.ptr()[i * d + j]) <
              1e-10);
      }
    }
  }
  SUBCASE("extend by m then by one equals extend by m+1") {
    LayerCache<double> c1, c2;
    c1.reset(2, 8, 16);
    c2.reset(2, 8, 16);
    InferWorkspace<double> ws;
    std::vector<double> rows_a(x.ptr(), x.ptr() + 3 * d);
    std::vector<double> row_b(x.ptr() + 3 * d, x.ptr() + 4 * d);
    std::vector<double> rows_ab(x.ptr(), x.ptr() + 4 * d);
    std::vector<int> pos3{0, 1, 2};
    std::vector<Visibility> vis3{Visibility::prefix(1), Visibility::prefix(2),
                                 Visibility::prefix(3)};
    const int pos_b = 3;
    const Visibility vis_b = Visibility::prefix(4);
    layer.extend(c1, rows_a.data(), 3, pos3.data(), vis3.data(), true, ws);
    layer.extend(c1, row_b.data(), 1, &pos_b, &vis_b, true, ws);
    std::vector<int> pos4{0, 1, 2, 3};
    std::vector<Visibility> vis4 = vis3;
    vis4.push_back(vis_b);
    layer.extend(c2, rows_ab.data(), 4, pos4.data(), vis4.data(), true, ws);
    for (int64_t j = 0; j < d; ++j) {
      CHECK(std::abs(row_b[static_cast<size_t>(j)] -
                     rows_ab[static_cast<size_t>(3 * d + j)]) < 1e-12);
    }
    CHECK(c1.len == c2.len);
  }
  SUBCASE("empty extension is a no-op") {
    LayerCache<double> cache;
    cache.reset(2, 8, 4);
    InferWorkspace<double> ws;
    layer.extend(cache, nullptr, 0, nullptr, nullptr, true, ws);
    CHECK(cache.len == 0);
  }
}

TEST_CASE("throughput law: backbone_forwards == ceil(len/m)") {
  Rng rng(777);
  const struct {
    Variant v;
    int n, m;
  } cases[] = {{Variant::ntp, 1, 1},          {Variant::mtp_vocalnet, 5, 3},
               {Variant::mtp_vocalnet, 5, 5}, {Variant::mtp_parallel, 5, 4},
               {Variant::mtp_deepseek, 5, 2}, {Variant::group_linear, 3, 3},
               {Variant::group_trans, 5, 5}};
  for (const auto& tc : cases) {
    auto model = DecoderModel<double>::init(inf_cfg(tc.v, tc.n), 31);
    for (int max_tokens : {1, 7, 15, 16}) {
      DecodeConfig cfg;
      cfg.m = tc.m;
      cfg.max_speech_tokens = max_tokens;
      cfg.ignore_eos = true;
      Engine<double> eng(model);
      const auto text = rand_text(rng, 2, 5);
      const auto rep = eng.generate(text, cfg);
      CHECK(static_cast<int>(rep.tokens.size()) == max_tokens);
      const int64_t expect =
          (static_cast<int64_t>(rep.tokens.size()) + tc.m - 1) / tc.m;
      INFO("variant ", to_string(tc.v), " m=", tc.m, " max=", max_tokens);
      CHECK(rep.backbone_forwards == expect);
      CHECK(rep.tokens_per_forward ==
            doctest::Approx(static_cast<double>(rep.tokens.size()) /
                            static_cast<double>(expect)));
    }
  }
  SUBCASE("m=3, emitted 15 -> 5 forwards") {
    auto model = DecoderModel<double>::init(inf_cfg(Variant::mtp_vocalnet, 5), 3);
    DecodeConfig cfg;
    cfg.m = 3;
    cfg.max_speech_tokens = 15;
    cfg.ignore_eos = true;
    Engine<double> eng(model);
    const auto rep = eng.generate({1, 2, 3}, cfg);
    CHECK(rep.backbone_forwards == 5);
  }
}

TEST_CASE("EOS discipline") {
  auto model = DecoderModel<double>::init(inf_cfg(Variant::mtp_vocalnet, 3), 13);
  const int eos = model.cfg.eos_id();
  SUBCASE("mid-block EOS truncates the block and stops generation") {
    // Rig head 1's bias so its argmax is always EOS.
    auto* bias = model.find_param("head.1.proj.b");
    REQUIRE(bias != nullptr);
    bias->data()[static_cast<size_t>(eos)] = 1e6;
    DecodeConfig cfg;
    cfg.m = 3;
    cfg.max_speech_tokens = 30;
    Engine<double> eng(model);
    const auto rep = eng.generate({1, 2}, cfg);
    REQUIRE(rep.tokens.size() == 2);  // head 0's token, then EOS from head 1
    CHECK(rep.tokens.back() == eos);
    CHECK(rep.backbone_forwards == 1);
    for (size_t i = 0; i + 1 < rep.tokens.size(); ++i) {
      CHECK(rep.tokens[i] != eos);
    }
    // The law holds with the terminal EOS counted.
    CHECK(rep.backbone_forwards ==
          (static_cast<int64_t>(rep.tokens.size()) + cfg.m - 1) / cfg.m);
  }
  SUBCASE("EOS from head 0 stops the run before deeper heads fire") {
    auto* bias = model.find_param("head.0.proj.b");
    REQUIRE(bias != nullptr);
    bias->data()[static_cast<size_t>(eos)] = 1e6;
    DecodeConfig cfg;
    cfg.m = 3;
    cfg.max_speech_tokens = 30;
    Engine<double> eng(model);
    const auto rep = eng.generate({1}, cfg);
    CHECK(rep.tokens == std::vector<int>{eos});
    CHECK(rep.backbone_forwards == 1);
  }
}

TEST_CASE("greedy generation is reproducible; sampling is seed-deterministic") {
  auto model = DecoderModel<float>::init(
      inf_cfg(Variant::mtp_parallel, 3, DtypeTag::f32), 99);
  DecodeConfig cfg;
  cfg.m = 3;
  cfg.max_speech_tokens = 24;
  cfg.ignore_eos = true;
  Engine<float> a(model), b(model);
  CHECK(a.generate({3, 1, 4}, cfg).tokens == b.generate({3, 1, 4}, cfg).tokens);

  cfg.mode = DecodeConfig::Mode::sample;
  cfg.temperature = 1.3;
  cfg.seed = 5;
  Engine<float> c(model), d(model);
  const auto t1 = c.generate({3, 1, 4}, cfg).tokens;
  CHECK(t1 == d.generate({3, 1, 4}, cfg).tokens);
}

TEST_CASE("decode config validation") {
  auto model = DecoderModel<double>::init(inf_cfg(Variant::mtp_vocalnet, 3), 1);
  Engine<double> eng(model);
  DecodeConfig cfg;
  cfg.m = 4;
  CHECK_THROWS_WITH_AS(eng.generate({1}, cfg), doctest::Contains("exceeds"),
                       ConfigError);
  auto gmodel = DecoderModel<double>::init(inf_cfg(Variant::group_linear, 3), 1);
  Engine<double> geng(gmodel);
  DecodeConfig gcfg;
  gcfg.m = 2;
  CHECK_THROWS_WITH_AS(geng.generate({1}, gcfg),
                       doctest::Contains("group size"), ConfigError);
}

TEST_CASE("streaming: chunk shapes (single first emission, then C_s chunks)") {
  auto model = DecoderModel<double>::init(inf_cfg(Variant::ntp, 1), 21);
  DecodeConfig cfg;
  cfg.max_speech_tokens = 11;
  cfg.ignore_eos = true;
  cfg.streaming = true;
  cfg.cs = 4;
  cfg.ct = 2;
  const std::vector<int> text{1, 2, 3, 4, 5, 6, 7, 8};

  std::vector<std::vector<int>> chunks;
  Engine<double> eng(model);
  const auto rep = eng.generate_streaming(
      text, cfg, eng.harness_reveal(text, cfg),
      [&](int, const std::vector<int>& c) { chunks.push_back(c); });
  REQUIRE(chunks.size() == 4);
  CHECK(chunks[0].size() == 1);
  CHECK(chunks[1].size() == 4);
  CHECK(chunks[2].size() == 4);
  CHECK(chunks[3].size() == 2);  // truncated tail
  CHECK(rep.backbone_forwards == 11);
}

TEST_CASE("streaming causality: unrevealed text never changes emitted chunks") {
  Rng rng(2025);
  int perturbable = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const bool mtp = trial % 2 == 1;
    auto model = DecoderModel<double>::init(
        inf_cfg(mtp ? Variant::mtp_vocalnet : Variant::ntp, mtp ? 2 : 1),
        3000 + static_cast<uint64_t>(trial));
    DecodeConfig cfg;
    cfg.m = mtp ? 2 : 1;
    cfg.streaming = true;
    cfg.cs = 3;
    cfg.ct = 2;
    cfg.max_speech_tokens = 8;
    cfg.ignore_eos = true;
    auto text = rand_text(rng, 9, 14);

    std::vector<std::vector<int>> base_chunks;
    Engine<double> eng(model);
    eng.generate_streaming(
        text, cfg, eng.harness_reveal(text, cfg),
        [&](int, const std::vector<int>& c) { base_chunks.push_back(c); });

    // The run revealed at most (chunks-1)*ct+1 text positions; anything
    // beyond that may change freely.
    const int last_chunk = static_cast<int>(base_chunks.size()) - 1;
    const int revealed = std::min(static_cast<int>(text.size()) + 1,
                                  last_chunk * cfg.ct + 1);
    if (revealed >= static_cast<int>(text.size()) + 1) continue;
    ++perturbable;
    auto perturbed = text;
    for (size_t i = static_cast<size_t>(revealed - 1); i < perturbed.size(); ++i) {
      perturbed[i] = (perturbed[i] + 7) % 16;
    }
    std::vector<std::vector<int>> new_chunks;
    Engine<double> eng2(model);
    eng2.generate_streaming(
        perturbed, cfg, eng2.harness_reveal(perturbed, cfg),
        [&](int, const std::vector<int>& c) { new_chunks.push_back(c); });
    REQUIRE(base_chunks.size() == new_chunks.size());
    for (size_t c = 0; c < base_chunks.size(); ++c) {
      CHECK(base_chunks[c] == new_chunks[c]);
    }
  }
  CHECK(perturbable > 10);
}

TEST_CASE("streaming: the first emission conditions only on BOS") {
  Rng rng(31415);
  for (int trial = 0; trial < 10; ++trial) {
    auto model = DecoderModel<double>::init(inf_cfg(Variant::ntp, 1),
                                            500 + static_cast<uint64_t>(trial));
    DecodeConfig cfg;
    cfg.streaming = true;
    cfg.cs = 5;
    cfg.ct = 2;
    cfg.max_speech_tokens = 1;
    cfg.ignore_eos = true;
    auto text = rand_text(rng, 4, 8);
    Engine<double> eng(model);
    const auto base = eng.generate_streaming(text, cfg,
                                             eng.harness_reveal(text, cfg),
                                             [](int, const std::vector<int>&) {});
    // Perturb every text position (BOS is the only fixed conditioning).
    auto perturbed = text;
    for (auto& t : perturbed) t = (t + 3) % 16;
    Engine<double> eng2(model);
    const auto altered = eng2.generate_streaming(
        perturbed, cfg, eng2.harness_reveal(perturbed, cfg),
        [](int, const std::vector<int>&) {});
    CHECK(base.tokens == altered.tokens);
  }
}

TEST_CASE("streaming with fully pre-revealed text equals the one-shot "
          "reference under the streaming mask") {
  Rng rng(606);
  for (auto variant : {Variant::ntp, Variant::mtp_vocalnet}) {
    auto model = DecoderModel<double>::init(
        inf_cfg(variant, variant == Variant::ntp ? 1 : 3), 808);
    DecodeConfig cfg;
    cfg.m = variant == Variant::ntp ? 1 : 3;
    cfg.streaming = true;
    cfg.cs = 4;
    cfg.ct = 3;
    cfg.max_speech_tokens = 13;
    cfg.ignore_eos = true;
    const auto text = rand_text(rng, 3, 7);
    Engine<double> eng(model);
    std::vector<int> all;
    eng.generate_streaming(text, cfg, Engine<double>::full_reveal(text),
                           [&](int, const std::vector<int>& c) {
                             all.insert(all.end(), c.begin(), c.end());
                           });
    const auto ref = refgen::reference_generate(model, text, cfg);
    CHECK(all == ref.tokens);
  }
}

TEST_CASE("streaming stall: a short provider raises StallError") {
  auto model = DecoderModel<double>::init(inf_cfg(Variant::ntp, 1), 17);
  DecodeConfig cfg;
  cfg.streaming = true;
  cfg.cs = 2;
  cfg.ct = 2;
  cfg.max_speech_tokens = 10;
  cfg.ignore_eos = true;
  const std::vector<int> text{1, 2, 3, 4, 5, 6};
  Engine<double> eng(model);
  // Provider stuck at BOS only: the second chunk needs ct+1 positions.
  CHECK_THROWS_WITH_AS(
      eng.generate_streaming(text, cfg, [](int, int64_t) { return 1; },
                             [](int, const std::vector<int>&) {}),
      doctest::Contains("stalled"), StallError);
}

TEST_CASE("entropy statistics") {
  SUBCASE("uniform distributions: entropy ln V, max prob 1/V") {
    auto model = DecoderModel<double>::init(inf_cfg(Variant::ntp, 1), 9);
    // Zero head weights and bias give all-zero logits -> uniform softmax.
    model.find_param("head.0.proj.w")->data().assign(
        model.find_param("head.0.proj.w")->data().size(), 0.0);
    synth::SynthGrammar g;
    std::vector<synth::CorpusRecord> recs;
    synth::CorpusRecord rec;
    rec.text = {1, 2};
    rec.speech = synth::expand(g, rec.text, 4);
    recs.push_back(rec);
    auto stats = infer::entropy_stats(model, recs, 64);
    const double ln_v = std::log(static_cast<double>(model.cfg.v_speech));
    CHECK(stats.mean_entropy == doctest::Approx(ln_v).epsilon(1e-9));
    CHECK(stats.mean_max_prob ==
          doctest::Approx(1.0 / model.cfg.v_speech).epsilon(1e-9));
  }
  SUBCASE("one-hot distributions: entropy 0, max prob 1") {
    auto model = DecoderModel<double>::init(inf_cfg(Variant::ntp, 1), 10);
    auto& b = model.find_param("head.0.proj.b")->data();
    b[3] = 1e4;  // domination makes every row effectively one-hot
    synth::SynthGrammar g;
    std::vector<synth::CorpusRecord> recs;
    synth::CorpusRecord rec;
    rec.text = {0};
    rec.speech = synth::expand(g, rec.text, 4);
    recs.push_back(rec);
    auto stats = infer::entropy_stats(model, recs, 16);
    CHECK(stats.mean_entropy == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(stats.mean_max_prob == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("log-sum-exp route matches direct summation within 1e-9") {
    auto model = DecoderModel<double>::init(inf_cfg(Variant::ntp, 1), 11);
    synth::SynthGrammar g;
    Rng rng(12);
    std::vector<synth::CorpusRecord> recs;
    for (int i = 0; i < 3; ++i) {
      synth::CorpusRecord rec;
      rec.text = rand_text(rng, 2, 5);
      rec.speech = synth::expand(g, rec.text, rng.next_u64());
      recs.push_back(rec);
    }
    auto stats = infer::entropy_stats(model, recs, 40);
    const int64_t budget = stats.n_tokens;
    // Direct-summation reference over the same records.
    const auto& cfg = model.cfg;
    const masks::ChunkSchedule sched(cfg.cs, cfg.ct);
    double sum_h = 0.0, sum_max = 0.0;
    int64_t n = 0;
    for (const auto& rec : recs) {
      if (n >= budget) break;
      std::vector<int> text{cfg.bos_id()};
      text.insert(text.end(), rec.text.begin(), rec.text.end());
      std::vector<int> speech{cfg.sos_id()};
      speech.insert(speech.end(), rec.speech.begin(), rec.speech.end() - 1);
      const int lt = static_cast<int>(text.size());
      const int ls = static_cast<int>(speech.size());
      auto mask = padded_joint_mask(lt, ls, lt, ls, masks::Mode::nonstreaming,
                                    sched);
      auto h = model.backbone_forward_one(text, speech, mask);
      auto rows = narrow(h, 0, lt, ls);
      auto logits = model.head_logits(0, rows);
      for (int64_t r = 0; r < ls && n < budget; ++r, ++n) {
        const double* l = logits.ptr() + r * cfg.v_speech;
        double mx = l[0];
        for (int j = 1; j < cfg.v_speech; ++j) mx = std::max(mx, l[j]);
        double z = 0.0;
        for (int j = 0; j < cfg.v_speech; ++j) z += std::exp(l[j] - mx);
        double h_direct = 0.0, pmax = 0.0;
        for (int j = 0; j < cfg.v_speech; ++j) {
          const double p = std::exp(l[j] - mx) / z;
          if (p > 0) h_direct -= p * std::log(p);
          pmax = std::max(pmax, p);
        }
        sum_h += h_direct;
        sum_max += pmax;
      }
    }
    const double denom = static_cast<double>(budget);
    CHECK(stats.mean_entropy == doctest::Approx(sum_h / denom).epsilon(1e-9));
    CHECK(stats.mean_max_prob ==
          doctest::Approx(sum_max / denom).epsilon(1e-9));
  }
}

TEST_CASE("latency bench reports the stage schema and modules stay below the "
          "backbone at m=3") {
  auto bc = inf_cfg(Variant::mtp_vocalnet, 5, DtypeTag::f32);
  bc.n_backbone_layers = 4;
  auto model = DecoderModel<float>::init(bc, 62);
  DecodeConfig cfg;
  cfg.m = 3;
  cfg.max_speech_tokens = 48;
  cfg.ignore_eos = true;
  std::vector<std::vector<int>> prompts{{1, 2, 3}, {4, 5}};
  auto res = infer::bench_latency(model, prompts, cfg, 3, 1);
  CHECK(res.aggregate.stages.backbone_ms > 0.0);
  CHECK(res.aggregate.stages.heads_ms > 0.0);
  CHECK(res.aggregate.stages.projector_ms > 0.0);
  // Four backbone layers versus two engaged single-layer modules.
  CHECK(res.aggregate.stages.backbone_ms > res.aggregate.stages.mtp_modules_ms);
}
