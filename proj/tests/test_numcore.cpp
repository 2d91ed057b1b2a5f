#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "vgs/error.hpp"
#include "vgs/grad_check.hpp"
#include "vgs/ops.hpp"
#include "vgs/param.hpp"
#include "vgs/rng.hpp"
#include "vgs/tensor.hpp"

using namespace vgs;

TEST_CASE("tensor shape and storage invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5);
  t.at(0, 1) = -2.0;
  CHECK(t[1] == -2.0);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK(shape_str(t) == "[2x3]");

  Tensor cube({2, 2, 2});
  cube.at(1, 0, 1) = 7.0;
  CHECK(cube[5] == 7.0);
}

TEST_CASE("rng determinism and bounds") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(99);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }

  // derivation depends on the root seed, not on stream position
  Rng fresh(7), consumed(7);
  for (int i = 0; i < 17; ++i) consumed.next_u64();
  CHECK(fresh.derive("x", 3).next_u64() == consumed.derive("x", 3).next_u64());
  CHECK(fresh.derive("x", 3).next_u64() != fresh.derive("x", 4).next_u64());
  CHECK(fresh.derive("x").next_u64() != fresh.derive("y").next_u64());

  Rng d(5);
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += d.normal();
  mean /= n;
  CHECK(std::fabs(mean) < 0.05);
}

TEST_CASE("affine examples") {
  ParamCollection pc;
  auto& w = pc.add("W", Tensor::from_rows({{1, 0}, {0, 1}}));
  auto& b = pc.add("b", Tensor::from_vector({0, 0}));

  // identity x identity
  Tensor x = Tensor::from_rows({{1, 0}, {0, 1}});
  Tensor y = affine(x, w, b);
  CHECK(y == x);

  // hand computation
  auto& w2 = pc.add("W2", Tensor::from_rows({{1}, {1}}));
  auto& b2 = pc.add("b2", Tensor::from_vector({0.5}));
  Tensor y2 = affine(Tensor::from_rows({{1, 2}}), w2, b2);
  CHECK(y2.at(0, 0) == doctest::Approx(3.5));

  // annihilation
  auto& wz = pc.add("Wz", Tensor::zeros({3, 2}));
  auto& bz = pc.add("bz", Tensor::zeros({2}));
  Rng rng(1);
  Tensor xr = test::random_tensor({4, 3}, rng);
  Tensor yz = affine(xr, wz, bz);
  for (std::size_t i = 0; i < yz.size(); ++i) CHECK(yz[i] == 0.0);

  // shape mismatch names both shapes
  CHECK_THROWS_WITH_AS(affine(Tensor({2, 3}), w, b), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("conv1d examples and length arithmetic") {
  ParamCollection pc;
  auto& k = pc.add("K", Tensor::full({2, 1, 1}, 1.0));
  auto& b = pc.add("b", Tensor::zeros({1}));

  Tensor x = Tensor::full({4, 1}, 1.0);
  Tensor y = conv1d(x, k, b, 2);
  REQUIRE(y.shape() == std::vector<std::size_t>{2, 1});
  CHECK(y.at(0, 0) == doctest::Approx(2.0));
  CHECK(y.at(1, 0) == doctest::Approx(2.0));

  CHECK(conv1d_out_len(6, 6, 2) == 1);
  CHECK(conv1d_out_len(13, 6, 2) == 4);

  // input too short carries T and k
  CHECK_THROWS_WITH_AS(conv1d_out_len(3, 6, 2), doctest::Contains("T=3"), DimensionError);
  CHECK_THROWS_WITH_AS(conv1d_out_len(3, 6, 2), doctest::Contains("k=6"), DimensionError);

  // output length formula on random triples
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t kk = 1 + rng.below(8);
    const std::size_t t = kk + rng.below(40);
    const int stride = 1 + static_cast<int>(rng.below(5));
    CHECK(conv1d_out_len(t, kk, stride) == (t - kk) / stride + 1);
  }
}

namespace {

ParamCollection scalar_gru_params() {
  ParamCollection pc;
  pc.add("Wz", Tensor::from_rows({{0.5}}));
  pc.add("Uz", Tensor::from_rows({{-0.3}}));
  pc.add("bz", Tensor::from_vector({0.1}));
  pc.add("Wr", Tensor::from_rows({{-0.2}}));
  pc.add("Ur", Tensor::from_rows({{0.4}}));
  pc.add("br", Tensor::from_vector({0.0}));
  pc.add("Wh", Tensor::from_rows({{0.7}}));
  pc.add("Uh", Tensor::from_rows({{0.6}}));
  pc.add("bh", Tensor::from_vector({-0.1}));
  return pc;
}

GruLayerParams view(const ParamCollection& pc) {
  return GruLayerParams{&pc.get("Wz"), &pc.get("Uz"), &pc.get("bz"),
                        &pc.get("Wr"), &pc.get("Ur"), &pc.get("br"),
                        &pc.get("Wh"), &pc.get("Uh"), &pc.get("bh")};
}

ParamCollection random_gru_params(std::size_t d_in, std::size_t d_h, Rng& rng, double scale) {
  ParamCollection pc;
  for (const char* n : {"Wz", "Wr", "Wh"}) pc.add(n, test::random_tensor({d_in, d_h}, rng, scale));
  for (const char* n : {"Uz", "Ur", "Uh"}) pc.add(n, test::random_tensor({d_h, d_h}, rng, scale));
  for (const char* n : {"bz", "br", "bh"}) pc.add(n, test::random_tensor({d_h}, rng, scale));
  return pc;
}

}  // namespace

TEST_CASE("gru_cell examples") {
  // zero params, zero state is a fixed point
  ParamCollection zero;
  for (const char* n : {"Wz", "Uz", "Wr", "Ur", "Wh", "Uh"}) zero.add(n, Tensor::zeros({1, 1}));
  for (const char* n : {"bz", "br", "bh"}) zero.add(n, Tensor::zeros({1}));
  Tensor h = gru_cell(Tensor::from_vector({0.9}), Tensor::from_vector({0.0}), view(zero));
  CHECK(h[0] == 0.0);

  // scalar cell against independently computed values
  ParamCollection pc = scalar_gru_params();
  Tensor h2 = gru_cell(Tensor::from_vector({0.8}), Tensor::from_vector({0.5}), view(pc));
  CHECK(h2[0] == doctest::Approx(0.52712235024418264).epsilon(1e-12));

  // hidden component bound; tanh saturation can round to exactly 1.0
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    ParamCollection rp = random_gru_params(3, 4, rng, 2.0);
    Tensor x = test::random_tensor({3}, rng, 5.0);
    Tensor hp({4});
    for (std::size_t i = 0; i < 4; ++i) hp[i] = rng.uniform(-0.999, 0.999);
    Tensor out = gru_cell(x, hp, view(rp));
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::fabs(out[i]) <= 1.0);
  }
}

TEST_CASE("gru_layer examples") {
  ParamCollection pc = scalar_gru_params();

  // T=1 reduces to the cell with h0 = 0
  Tensor x1 = Tensor::from_rows({{0.8}});
  Tensor seq = gru_layer(x1, view(pc));
  Tensor cell = gru_cell(Tensor::from_vector({0.8}), Tensor::from_vector({0.0}), view(pc));
  CHECK(seq.at(0, 0) == cell[0]);

  // zero params -> all-zero output
  ParamCollection zero;
  for (const char* n : {"Wz", "Uz", "Wr", "Ur", "Wh", "Uh"}) zero.add(n, Tensor::zeros({1, 2}));
  for (const char* n : {"bz", "br", "bh"}) zero.add(n, Tensor::zeros({2}));
  // fix U shapes
  ParamCollection zero2;
  for (const char* n : {"Wz", "Wr", "Wh"}) zero2.add(n, Tensor::zeros({1, 2}));
  for (const char* n : {"Uz", "Ur", "Uh"}) zero2.add(n, Tensor::zeros({2, 2}));
  for (const char* n : {"bz", "br", "bh"}) zero2.add(n, Tensor::zeros({2}));
  Tensor zout = gru_layer(Tensor::from_rows({{1.0}, {-2.0}, {0.5}}), view(zero2));
  for (std::size_t i = 0; i < zout.size(); ++i) CHECK(zout[i] == 0.0);

  // T=3 scalar scan against the unrolled oracle
  Tensor x3 = Tensor::from_rows({{0.8}, {-0.5}, {0.3}});
  Tensor out3 = gru_layer(x3, view(pc));
  CHECK(out3.at(0, 0) == doctest::Approx(0.26770993058975318).epsilon(1e-12));
  CHECK(out3.at(1, 0) == doctest::Approx(-0.004162094966857377).epsilon(1e-12));
  CHECK(out3.at(2, 0) == doctest::Approx(0.059131277402938692).epsilon(1e-12));

  // components stay bounded from h0 = 0
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    ParamCollection rp = random_gru_params(2, 3, rng, 2.5);
    Tensor x = test::random_tensor({10, 2}, rng, 4.0);
    Tensor out = gru_layer(x, view(rp));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::fabs(out[i]) <= 1.0);
  }
}

TEST_CASE("softmax examples and properties") {
  // constant input -> uniform
  Tensor u = softmax(Tensor::full({5}, 3.7));
  for (std::size_t i = 0; i < 5; ++i) CHECK(u[i] == doctest::Approx(0.2).epsilon(1e-12));

  // [0, ln 3] -> [0.25, 0.75]
  Tensor s = softmax(Tensor::from_vector({0.0, std::log(3.0)}));
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    Tensor x = test::random_tensor({n}, rng, 10.0);
    Tensor y = softmax(x);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(y[i] > 0.0);
      sum += y[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    // shift invariance
    const double c = rng.uniform(-50.0, 50.0);
    Tensor xs = x;
    for (std::size_t i = 0; i < n; ++i) xs[i] += c;
    Tensor ys = softmax(xs);
    for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == doctest::Approx(y[i]).epsilon(1e-9));
  }
}

TEST_CASE("l2_normalize examples and properties") {
  Tensor v = l2_normalize(Tensor::from_vector({3, 4}));
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-12));

  CHECK_THROWS_AS(l2_normalize(Tensor::from_vector({0, 0})), NumericError);

  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    Tensor x = test::random_tensor({n}, rng);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) sq += x[i] * x[i];
    if (std::sqrt(sq) <= 1e-12) continue;
    Tensor y = l2_normalize(x);
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += y[i] * y[i];
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));

    // idempotence
    Tensor yy = l2_normalize(y);
    for (std::size_t i = 0; i < n; ++i) CHECK(yy[i] == doctest::Approx(y[i]).epsilon(1e-9));
  }
}

TEST_CASE("grad_check on simple objectives") {
  // f = sum th^2, analytic gradient 2 th
  ParamCollection pc;
  Rng rng(3);
  pc.add("a", test::random_tensor({3, 2}, rng));
  pc.add("b", test::random_tensor({4}, rng));
  auto quadratic = [](ParamCollection& params, bool with_grad) {
    double sum = 0.0;
    for (auto& p : params)
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        sum += p.value[k] * p.value[k];
        if (with_grad) p.grad[k] += 2.0 * p.value[k];
      }
    return sum;
  };
  auto report = grad_check(quadratic, pc);
  CHECK(report.passed);
  CHECK(report.n_components == 10);

  // constant objective -> zero gradient everywhere
  auto constant = [](ParamCollection&, bool) { return 42.0; };
  auto creport = grad_check(constant, pc);
  CHECK(creport.passed);
  CHECK(creport.max_rel_error == 0.0);

  // a deliberately wrong gradient is caught
  auto wrong = [](ParamCollection& params, bool with_grad) {
    double sum = 0.0;
    for (auto& p : params)
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        sum += p.value[k] * p.value[k];
        if (with_grad) p.grad[k] += 3.0 * p.value[k];
      }
    return sum;
  };
  CHECK_FALSE(grad_check(wrong, pc).passed);

  // non-finite objective is an evaluation error
  auto bad = [](ParamCollection&, bool) { return std::nan(""); };
  CHECK_THROWS_AS(grad_check(bad, pc), NumericError);
}

namespace {

// Composite objective exercising every op's backward pass: a weighted sum of
// an affine -> conv -> gru -> softmax-attention-like reduction would couple
// everything, but pieces are checked independently here to localize failures.
double affine_objective(ParamCollection& params, bool with_grad, const Tensor& x,
                        const Tensor& weights) {
  AffineTrace tr;
  Parameter& w = params.get("W");
  Parameter& b = params.get("b");
  Tensor y = affine_fwd(x, w, b, tr);
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) loss += weights[i] * std::tanh(y[i]);
  if (with_grad) {
    Tensor dy(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
      dy[i] = weights[i] * (1.0 - std::tanh(y[i]) * std::tanh(y[i]));
    affine_bwd(dy, tr, w, w.grad, b.grad, nullptr);
  }
  return loss;
}

}  // namespace

TEST_CASE("op-level gradient checks over random shapes and seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);

    // affine through tanh
    {
      const std::size_t n = 1 + rng.below(3), m = 1 + rng.below(4), p = 1 + rng.below(4);
      ParamCollection pc;
      pc.add("W", test::random_tensor({m, p}, rng, 0.7));
      pc.add("b", test::random_tensor({p}, rng, 0.5));
      Tensor x = test::random_tensor({n, m}, rng);
      Tensor weights = test::random_tensor({n * p}, rng);
      auto f = [&](ParamCollection& params, bool g) {
        return affine_objective(params, g, x, weights);
      };
      auto rep = grad_check(f, pc);
      INFO("affine seed ", seed, " worst ", rep.worst_param, " rel ", rep.max_rel_error);
      CHECK(rep.passed);
    }

    // conv1d
    {
      const std::size_t k = 1 + rng.below(3);
      const std::size_t t = k + rng.below(6);
      const int stride = 1 + static_cast<int>(rng.below(3));
      const std::size_t din = 1 + rng.below(3), dout = 1 + rng.below(3);
      ParamCollection pc;
      pc.add("K", test::random_tensor({k, din, dout}, rng, 0.6));
      pc.add("b", test::random_tensor({dout}, rng, 0.4));
      Tensor x = test::random_tensor({t, din}, rng);
      Tensor weights = test::random_tensor({conv1d_out_len(t, k, stride) * dout}, rng);
      auto f = [&](ParamCollection& params, bool g) {
        Conv1dTrace tr;
        Parameter& kp = params.get("K");
        Parameter& bp = params.get("b");
        Tensor y = conv1d_fwd(x, kp, bp, stride, tr);
        double loss = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) loss += weights[i] * std::sin(y[i]);
        if (g) {
          Tensor dy(y.shape());
          for (std::size_t i = 0; i < y.size(); ++i) dy[i] = weights[i] * std::cos(y[i]);
          conv1d_bwd(dy, tr, kp, kp.grad, bp.grad, nullptr);
        }
        return loss;
      };
      auto rep = grad_check(f, pc);
      INFO("conv seed ", seed, " worst ", rep.worst_param, " rel ", rep.max_rel_error);
      CHECK(rep.passed);
    }

    // gru layer, all hidden states weighted
    {
      const std::size_t din = 1 + rng.below(3), dh = 1 + rng.below(3);
      const std::size_t t = 1 + rng.below(6);
      ParamCollection pc = random_gru_params(din, dh, rng, 0.8);
      Tensor x = test::random_tensor({t, din}, rng);
      Tensor weights = test::random_tensor({t * dh}, rng);
      auto f = [&](ParamCollection& params, bool g) {
        GruLayerTrace tr;
        auto vp = view(params);
        Tensor h = gru_layer_fwd(x, vp, tr);
        double loss = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) loss += weights[i] * h[i];
        if (g) {
          Tensor dh_all(h.shape());
          for (std::size_t i = 0; i < h.size(); ++i) dh_all[i] = weights[i];
          GruLayerGrads grads{&params.get("Wz").grad, &params.get("Uz").grad,
                              &params.get("bz").grad, &params.get("Wr").grad,
                              &params.get("Ur").grad, &params.get("br").grad,
                              &params.get("Wh").grad, &params.get("Uh").grad,
                              &params.get("bh").grad};
          gru_layer_bwd(dh_all, tr, vp, grads, nullptr);
        }
        return loss;
      };
      auto rep = grad_check(f, pc);
      INFO("gru seed ", seed, " worst ", rep.worst_param, " rel ", rep.max_rel_error);
      CHECK(rep.passed);
    }
  }
}

TEST_CASE("gru input gradients propagate through dx") {
  // check dx by treating x as a parameter
  Rng rng(555);
  const std::size_t din = 2, dh = 3, t = 4;
  ParamCollection weights = random_gru_params(din, dh, rng, 0.8);
  ParamCollection pc;
  pc.add("x", test::random_tensor({t, din}, rng));
  Tensor mix = test::random_tensor({t * dh}, rng);

  auto f = [&](ParamCollection& params, bool g) {
    GruLayerTrace tr;
    auto vp = view(weights);
    Tensor h = gru_layer_fwd(params.get("x").value, vp, tr);
    double loss = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) loss += mix[i] * h[i];
    if (g) {
      Tensor dh_all(h.shape());
      for (std::size_t i = 0; i < h.size(); ++i) dh_all[i] = mix[i];
      GruLayerGrads grads{&weights.get("Wz").grad, &weights.get("Uz").grad,
                          &weights.get("bz").grad, &weights.get("Wr").grad,
                          &weights.get("Ur").grad, &weights.get("br").grad,
                          &weights.get("Wh").grad, &weights.get("Uh").grad,
                          &weights.get("bh").grad};
      gru_layer_bwd(dh_all, tr, vp, grads, &params.get("x").grad);
    }
    return loss;
  };
  CHECK(grad_check(f, pc).passed);
}
