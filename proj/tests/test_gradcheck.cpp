#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

// Finite-difference verification of every layer type's gradients: the
// analytic tape gradient of a scalar loss is compared against central
// differences at f64, h = 1e-5, on sampled parameters.

#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "mtpslab/model.hpp"
#include "mtpslab/rng.hpp"
#include "mtpslab/training.hpp"

using namespace mtpslab;

namespace {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-4;

// Relative error with an absolute floor: central differences at h=1e-5 carry
// ~|loss|*eps/h ~ 1e-10 of cancellation noise, so gradients below 1e-5 are
// held to that absolute scale instead of an ill-defined quotient.
bool grads_close(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / denom <= kRelTol;
}

/// Check sampled parameter entries of every registered parameter against
/// central finite differences of `loss_fn`.
void gradcheck_model(DecoderModel<double>& model,
                     const std::function<Tensor<double>()>& loss_fn,
                     int n_samples_per_param, uint64_t seed) {
  model.zero_grads();
  {
    Tape<double> tape;
    auto loss = loss_fn();
    tape.backward(loss);
  }
  Rng rng(seed);
  int checked = 0;
  for (auto& [name, p] : model.params) {
    const int64_t n = p.numel();
    const int samples =
        static_cast<int>(std::min<int64_t>(n, n_samples_per_param));
    for (int s = 0; s < samples; ++s) {
      const int64_t i = rng.uniform_int(0, n - 1);
      const double saved = p.data()[static_cast<size_t>(i)];
      p.data()[static_cast<size_t>(i)] = saved + kStep;
      const double lp = loss_fn().item();
      p.data()[static_cast<size_t>(i)] = saved - kStep;
      const double lm = loss_fn().item();
      p.data()[static_cast<size_t>(i)] = saved;
      const double numeric = (lp - lm) / (2 * kStep);
      const double analytic =
          p.has_grad() ? p.grad()[static_cast<size_t>(i)] : 0.0;
      INFO("param ", name, " index ", i, " analytic ", analytic, " numeric ",
           numeric);
      CHECK(grads_close(analytic, numeric));
      ++checked;
    }
  }
  CHECK(checked >= 50);
  model.zero_grads();
}

ModelConfig gc_cfg(Variant v, int n) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 24;
  c.n_backbone_layers = 1;
  c.n_projector_layers = 1;
  c.variant = v;
  c.n = n;
  c.dtype = DtypeTag::f64;
  return c;
}

train::Batch gc_batch(const ModelConfig& cfg, uint64_t seed) {
  synth::SynthGrammar g;
  Rng rng(seed);
  std::vector<synth::CorpusRecord> corpus;
  for (int i = 0; i < 2; ++i) {
    synth::CorpusRecord rec;
    const int len = static_cast<int>(rng.uniform_int(2, 4));
    for (int j = 0; j < len; ++j)
      rec.text.push_back(static_cast<int>(rng.uniform_int(0, g.t_symbols - 1)));
    rec.speech = synth::expand(g, rec.text, rng.next_u64());
    corpus.push_back(rec);
  }
  return train::assemble_batch(
      cfg, corpus, {0, 1}, {masks::Mode::streaming, masks::Mode::nonstreaming});
}

}  // namespace

TEST_CASE("gradients: ntp loss (attention, mlp, rms norm, embeddings, head)") {
  auto model = DecoderModel<double>::init(gc_cfg(Variant::ntp, 1), 101);
  auto batch = gc_batch(model.cfg, 11);
  gradcheck_model(
      model, [&] { return train::ntp_loss(model, batch).total; }, 8, 1);
}

TEST_CASE("gradients: vocalnet chain and per-depth heads") {
  auto model = DecoderModel<double>::init(gc_cfg(Variant::mtp_vocalnet, 3), 102);
  auto batch = gc_batch(model.cfg, 12);
  gradcheck_model(
      model, [&] { return train::mtp_loss(model, batch).total; }, 6, 2);
}

TEST_CASE("gradients: parallel heads") {
  auto model = DecoderModel<double>::init(gc_cfg(Variant::mtp_parallel, 3), 103);
  auto batch = gc_batch(model.cfg, 13);
  gradcheck_model(
      model, [&] { return train::parallel_loss(model, batch).total; }, 6, 3);
}

TEST_CASE("gradients: deepseek merge and chain") {
  auto model = DecoderModel<double>::init(gc_cfg(Variant::mtp_deepseek, 3), 104);
  auto batch = gc_batch(model.cfg, 14);
  gradcheck_model(
      model, [&] { return train::deepseek_loss(model, batch).total; }, 6, 4);
}

TEST_CASE("gradients: group compose and linear decompose") {
  auto model = DecoderModel<double>::init(gc_cfg(Variant::group_linear, 3), 105);
  auto batch = gc_batch(model.cfg, 15);
  gradcheck_model(
      model, [&] { return train::group_loss(model, batch).total; }, 8, 5);
}

TEST_CASE("gradients: group transformer decompose with learned queries") {
  auto model = DecoderModel<double>::init(gc_cfg(Variant::group_trans, 3), 106);
  auto batch = gc_batch(model.cfg, 16);
  gradcheck_model(
      model, [&] { return train::group_loss(model, batch).total; }, 6, 6);
}

TEST_CASE("gradients: sinusoidal position encoding path") {
  auto cfg = gc_cfg(Variant::ntp, 1);
  cfg.pos_encoding = PosEncoding::sinusoidal;
  auto model = DecoderModel<double>::init(cfg, 107);
  auto batch = gc_batch(model.cfg, 17);
  gradcheck_model(
      model, [&] { return train::ntp_loss(model, batch).total; }, 6, 7);
}
