#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cmath>
#include <vector>

#include "doctest.h"
#include "mtpslab/ops.hpp"
#include "mtpslab/optim.hpp"
#include "mtpslab/rng.hpp"
#include "mtpslab/tensor.hpp"

using namespace mtpslab;

TEST_CASE("matmul hand arithmetic") {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from({2, 1}, {1, 1});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.data() == std::vector<double>{3, 7});
}

TEST_CASE("matmul shape error names both shapes") {
  auto a = Tensor<double>::from({2, 3}, std::vector<double>(6, 1.0));
  auto b = Tensor<double>::from({4, 5}, std::vector<double>(20, 1.0));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2 x 3]"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4 x 5]"), ShapeError);
}

TEST_CASE("masked softmax basics") {
  SUBCASE("uniform logits, k unmasked -> 1/k each") {
    auto x = Tensor<double>::from({1, 4}, {0.7, 0.7, 0.7, 0.7});
    std::vector<uint8_t> mask{1, 1, 1, 0};
    auto p = masked_softmax(x, mask);
    CHECK(p.data()[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(p.data()[2] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(p.data()[3] == 0.0);
  }
  SUBCASE("single survivor") {
    auto x = Tensor<double>::from({1, 2}, {0.0, 0.0});
    std::vector<uint8_t> mask{1, 0};
    auto p = masked_softmax(x, mask);
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[1] == 0.0);
  }
  SUBCASE("hand arithmetic ln1 vs ln3") {
    auto x = Tensor<double>::from({1, 2}, {std::log(1.0), std::log(3.0)});
    std::vector<uint8_t> mask{1, 1};
    auto p = masked_softmax(x, mask);
    CHECK(p.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("all-masked row throws") {
    auto x = Tensor<double>::from({1, 2}, {0.0, 0.0});
    std::vector<uint8_t> mask{0, 0};
    CHECK_THROWS_WITH_AS(masked_softmax(x, mask),
                         doctest::Contains("invalid mask"), MaskError);
  }
}

TEST_CASE("masked softmax rows sum to 1 within 1e-9 and masked are exact 0") {
  Rng rng(5);
  const int64_t rows = 64, n = 37;
  auto x = Tensor<double>::randn({rows, n}, rng, 3.0);
  std::vector<uint8_t> mask(static_cast<size_t>(rows * n));
  for (int64_t r = 0; r < rows; ++r) {
    bool any = false;
    for (int64_t j = 0; j < n; ++j) {
      const bool bit = rng.bernoulli(0.6);
      mask[static_cast<size_t>(r * n + j)] = bit;
      any |= bit;
    }
    if (!any) mask[static_cast<size_t>(r * n)] = 1;
  }
  auto p = masked_softmax(x, mask, 1);
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double v = p.data()[static_cast<size_t>(r * n + j)];
      if (!mask[static_cast<size_t>(r * n + j)]) CHECK(v == 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("rms_norm") {
  auto gain = Tensor<double>::from({2}, {1.0, 1.0});
  SUBCASE("constant vector -> ones") {
    auto x = Tensor<double>::from({1, 2}, {4.0, 4.0});
    auto y = rms_norm(x, gain);
    CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("zero vector stays zero") {
    auto x = Tensor<double>::from({1, 2}, {0.0, 0.0});
    auto y = rms_norm(x, gain);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
  }
  SUBCASE("hand arithmetic (3,4)") {
    auto x = Tensor<double>::from({1, 2}, {3.0, 4.0});
    auto y = rms_norm(x, gain);
    CHECK(y.data()[0] == doctest::Approx(3.0 / std::sqrt(12.5)).epsilon(1e-6));
    CHECK(y.data()[1] == doctest::Approx(4.0 / std::sqrt(12.5)).epsilon(1e-6));
  }
}

TEST_CASE("rotary") {
  SUBCASE("position 0 is identity") {
    Rng rng(9);
    auto x = Tensor<double>::randn({3, 2, 8}, rng, 1.0);
    auto y = rotary(x, {0, 0, 0});
    CHECK(y.data() == x.data());
  }
  SUBCASE("hand case d_head=2, pos 1, (1,0)") {
    auto x = Tensor<double>::from({1, 1, 2}, {1.0, 0.0});
    auto y = rotary(x, {1});
    CHECK(y.data()[0] == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
  }
  SUBCASE("per-pair norms preserved within 1e-12") {
    Rng rng(17);
    auto x = Tensor<double>::randn({5, 3, 16}, rng, 2.0);
    auto y = rotary(x, {0, 3, 11, 100, 4096});
    for (int64_t r = 0; r < 15; ++r) {
      for (int64_t i = 0; i < 8; ++i) {
        const double nx = std::hypot(x.data()[r * 16 + 2 * i],
                                     x.data()[r * 16 + 2 * i + 1]);
        const double ny = std::hypot(y.data()[r * 16 + 2 * i],
                                     y.data()[r * 16 + 2 * i + 1]);
        CHECK(std::abs(nx - ny) < 1e-12);
      }
    }
  }
  SUBCASE("odd head dim is a config error") {
    auto x = Tensor<double>::from({1, 1, 3}, {1, 2, 3});
    CHECK_THROWS_AS(rotary(x, {0}), ConfigError);
  }
}

TEST_CASE("cross entropy") {
  SUBCASE("dominant target logit -> loss ~ 0") {
    auto logits = Tensor<double>::from({1, 4}, {1e4, 0, 0, 0});
    auto loss = cross_entropy(logits, {0});
    CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("uniform logits V=4 -> ln 4") {
    auto logits = Tensor<double>::from({2, 4}, std::vector<double>(8, 0.0));
    auto loss = cross_entropy(logits, {1, 3});
    CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("all ignored -> 0 with zero gradient") {
    auto logits = Tensor<double>::from({2, 3}, std::vector<double>(6, 1.0));
    logits.set_requires_grad(true);
    Tape<double> tape;
    auto loss = cross_entropy(logits, {kIgnoreIndex, kIgnoreIndex});
    CHECK(loss.item() == 0.0);
    tape.backward(loss);
    CHECK_FALSE(logits.has_grad());
  }
  SUBCASE("out-of-range target") {
    auto logits = Tensor<double>::from({1, 3}, {0, 0, 0});
    CHECK_THROWS_AS(cross_entropy(logits, {5}), IndexError);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("loss = sum(x) gives ones") {
    auto x = Tensor<double>::from({3}, {1, 2, 3});
    x.set_requires_grad(true);
    Tape<double> tape;
    auto loss = sum_all(x);
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
  }
  SUBCASE("loss = sum(x^2) at (1,2) gives (2,4)") {
    auto x = Tensor<double>::from({2}, {1, 2});
    x.set_requires_grad(true);
    Tape<double> tape;
    auto loss = sum_all(mul(x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
  }
  SUBCASE("repeated backward accumulates additively") {
    auto x = Tensor<double>::from({2}, {1, 2});
    x.set_requires_grad(true);
    Tape<double> tape;
    auto loss = sum_all(x);
    tape.backward(loss);
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{2, 2});
  }
  SUBCASE("non-scalar loss is a contract error") {
    auto x = Tensor<double>::from({2}, {1, 2});
    x.set_requires_grad(true);
    Tape<double> tape;
    auto y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
  }
}

TEST_CASE("matmul gradients match analytic rules") {
  Rng rng(21);
  auto a = Tensor<double>::randn({3, 4}, rng, 1.0);
  auto b = Tensor<double>::randn({4, 2}, rng, 1.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape<double> tape;
  auto c = matmul(a, b);
  auto loss = sum_all(c);
  tape.backward(loss);
  // dA = 1 . B^T (row sums of B), dB = A^T . 1 (col sums of A).
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      double expect = b.data()[j * 2] + b.data()[j * 2 + 1];
      CHECK(a.grad()[i * 4 + j] == doctest::Approx(expect).epsilon(1e-12));
    }
  for (int64_t j = 0; j < 4; ++j) {
    const double col = a.data()[j] + a.data()[4 + j] + a.data()[8 + j];
    CHECK(b.grad()[j * 2] == doctest::Approx(col).epsilon(1e-12));
  }
}

TEST_CASE("adam") {
  SUBCASE("first step moves by ~ -lr*sign(g)") {
    std::vector<std::pair<std::string, Tensor<double>>> params;
    params.emplace_back("w", Tensor<double>::from({3}, {1.0, 1.0, 1.0}));
    params[0].second.set_requires_grad(true);
    params[0].second.grad() = {0.5, -2.0, 1e-12};
    AdamState<double> st;
    st.init(params);
    adam_step(st, params, 0.1);
    CHECK(params[0].second.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(params[0].second.data()[1] == doctest::Approx(1.1).epsilon(1e-6));
    // Tiny gradient against eps: step stays well below lr.
    CHECK(std::abs(params[0].second.data()[2] - 1.0) < 0.01);
  }
  SUBCASE("zero grads leave params unchanged") {
    std::vector<std::pair<std::string, Tensor<double>>> params;
    params.emplace_back("w", Tensor<double>::from({2}, {3.0, -4.0}));
    params[0].second.grad() = {0.0, 0.0};
    AdamState<double> st;
    st.init(params);
    adam_step(st, params, 0.1);
    CHECK(params[0].second.data() == std::vector<double>{3.0, -4.0});
  }
  SUBCASE("NaN grad aborts naming the parameter") {
    std::vector<std::pair<std::string, Tensor<double>>> params;
    params.emplace_back("bad.w", Tensor<double>::from({1}, {1.0}));
    params[0].second.grad() = {std::nan("")};
    AdamState<double> st;
    st.init(params);
    CHECK_THROWS_WITH_AS(adam_step(st, params, 0.1),
                         doctest::Contains("bad.w"), NumericError);
  }
}

TEST_CASE("ops are deterministic across exec modes") {
  Rng rng(33);
  auto x = Tensor<float>::randn({64, 96}, rng, 1.0);
  auto w = Tensor<float>::randn({96, 48}, rng, 0.1);
  const auto saved = kernels::exec_mode();
  kernels::set_exec_mode(kernels::Exec::serial);
  auto y1 = matmul(x, w);
  kernels::set_exec_mode(kernels::Exec::parallel);
  auto y2 = matmul(x, w);
  kernels::set_exec_mode(saved);
  CHECK(y1.data() == y2.data());
}
