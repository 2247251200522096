#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "claimcast/nn.hpp"

using namespace claimcast::nn;

namespace {

Tensor filled(std::vector<std::size_t> shape, std::vector<double> values) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = values[i];
  return t;
}

void randomize(const ParamList& params, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (const auto& p : params) {
    for (double& v : p.tensor->data()) v = u(rng);
  }
}

std::vector<Vec> random_sequence(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec> xs(n, Vec(dim));
  for (auto& x : xs) {
    for (double& v : x) v = g(rng);
  }
  return xs;
}

// Fixed random projection of a list of vectors to a scalar loss.
double project(const std::vector<Vec>& ys, const std::vector<Vec>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    for (std::size_t j = 0; j < ys[i].size(); ++j) s += ys[i][j] * w[i][j];
  }
  return s;
}

constexpr double kGradTolerance = 1e-6;

}  // namespace

TEST_CASE("dense: worked example and shape errors") {
  DenseParams d = DenseParams::create(2, 1);
  d.weight = filled({1, 2}, {2.0, -1.0});
  d.bias = filled({1}, {0.5});
  const Vec x{3.0, 4.0};
  CHECK(dense_forward(d, x)[0] == 2.5);

  DenseParams g = DenseParams::create(2, 1);
  Vec dx(2, 0.0);
  const Vec dy{1.0};
  dense_backward(d, x, dy, g, dx);
  CHECK(g.weight[0] == 3.0);
  CHECK(g.weight[1] == 4.0);
  CHECK(g.bias[0] == 1.0);
  CHECK(dx == Vec{2.0, -1.0});

  const Vec wrong{1.0};
  CHECK_THROWS_AS(dense_forward(d, wrong), ShapeError);
}

TEST_CASE("gru: scalar cell against a hand-computed oracle") {
  GruLayerParams p = GruLayerParams::create(1, 1, false);
  auto& c = p.forward;
  c.w_update[0] = 0.3;
  c.u_update[0] = -0.2;
  c.b_update[0] = 0.1;
  c.w_reset[0] = -0.4;
  c.u_reset[0] = 0.5;
  c.b_reset[0] = 0.0;
  c.w_candidate[0] = 0.7;
  c.u_candidate[0] = 0.6;
  c.b_candidate[0] = -0.1;

  const std::vector<double> xs{1.0, -2.0, 0.5};
  double h = 0.0;
  std::vector<double> expected;
  for (double x : xs) {
    const double z = 1.0 / (1.0 + std::exp(-(0.3 * x - 0.2 * h + 0.1)));
    const double r = 1.0 / (1.0 + std::exp(-(-0.4 * x + 0.5 * h)));
    const double cand = std::tanh(0.7 * x + 0.6 * (r * h) - 0.1);
    h = (1.0 - z) * h + z * cand;
    expected.push_back(h);
  }
  std::vector<Vec> inputs;
  for (double x : xs) inputs.push_back({x});
  const auto out = gru_forward(p, inputs, {});
  REQUIRE(out.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out[i][0] == doctest::Approx(expected[i]).epsilon(1e-14));

  // A masked middle step carries the state through unchanged.
  const auto masked = gru_forward(p, inputs, {true, false, true});
  CHECK(masked[1][0] == masked[0][0]);
  CHECK(masked[0][0] == out[0][0]);
}

TEST_CASE("gru: bidirectional output is forward then reversed backward pass") {
  std::mt19937_64 rng(5);
  GruLayerParams p = GruLayerParams::create(3, 4, true);
  p.init(rng);
  const auto xs = random_sequence(5, 3, rng);
  const auto out = gru_forward(p, xs, {});
  REQUIRE(out.size() == 5);
  CHECK(out[0].size() == 8);

  GruLayerParams only_fwd = GruLayerParams::create(3, 4, false);
  only_fwd.forward = p.forward;
  GruLayerParams only_bwd = GruLayerParams::create(3, 4, false);
  only_bwd.forward = p.backward;
  const auto f = gru_forward(only_fwd, xs, {});
  const std::vector<Vec> reversed(xs.rbegin(), xs.rend());
  const auto b = gru_forward(only_bwd, reversed, {});
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out[t][j] == f[t][j]);
      CHECK(out[t][4 + j] == b[4 - t][j]);
    }
  }
}

TEST_CASE("gru: analytic gradients match finite differences") {
  for (bool bidirectional : {false, true}) {
    std::mt19937_64 rng(11);
    GruLayerParams p = GruLayerParams::create(3, 4, bidirectional);
    p.init(rng);
    GruLayerParams g = GruLayerParams::create(3, 4, bidirectional);
    ParamList params, grads;
    p.collect("gru", params);
    g.collect("gru", grads);
    randomize(params, rng);
    const auto xs = random_sequence(6, 3, rng);
    const std::vector<bool> mask{true, true, false, true, true, true};
    const auto w = random_sequence(6, p.output_dim(), rng);

    GruTrace trace;
    gru_forward(p, xs, mask, &trace);
    zero(grads);
    gru_backward(p, trace, w, g);
    const auto loss = [&] { return project(gru_forward(p, xs, mask), w); };
    const auto coords = all_coordinates(params);
    const auto r = check_gradients(params, grads, loss, coords, 1e-4, Stencil::central4);
    CHECK(r.checked == coords.size());
    CHECK(r.max_relative_error < kGradTolerance);
  }
}

TEST_CASE("attention: scalar oracle, fallback and weights") {
  AttentionParams a = AttentionParams::create(1, 1, 1);
  a.score_weight = filled({1, 2}, {0.5, -0.3});
  a.score_vector = filled({1}, {2.0});
  a.combine_weight = filled({1, 2}, {0.8, 0.4});
  const std::vector<Vec> states{{1.0}, {-0.5}, {0.25}};

  const auto out = attention_forward(a, states, 2);
  const double s0 = 2.0 * std::tanh(0.5 * 0.25 - 0.3 * 1.0);
  const double s1 = 2.0 * std::tanh(0.5 * 0.25 - 0.3 * -0.5);
  const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  const double ctx = a0 * 1.0 + (1.0 - a0) * -0.5;
  REQUIRE(out.weights.size() == 2);
  CHECK(out.weights[0] == doctest::Approx(a0).epsilon(1e-14));
  CHECK(out.weights[0] + out.weights[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(out.attended[0] == doctest::Approx(std::tanh(0.8 * ctx + 0.4 * 0.25)).epsilon(1e-14));
  CHECK_FALSE(out.fallback);

  const auto first = attention_forward(a, states, 0);
  CHECK(first.fallback);
  CHECK(first.weights == Vec{1.0});
  CHECK(first.attended[0] == doctest::Approx(std::tanh(1.2)).epsilon(1e-14));
  CHECK(project_last(a, states[2])[0] == doctest::Approx(std::tanh(1.2 * 0.25)).epsilon(1e-14));
}

TEST_CASE("attention: analytic gradients match finite differences") {
  for (std::size_t query : {std::size_t{0}, std::size_t{4}}) {
    std::mt19937_64 rng(17 + query);
    AttentionParams p = AttentionParams::create(4, 3, 5);
    p.init(rng);
    AttentionParams g = AttentionParams::create(4, 3, 5);
    ParamList params, grads;
    p.collect("att", params);
    g.collect("att", grads);
    randomize(params, rng);
    auto states = random_sequence(5, 4, rng);
    const auto w = random_sequence(1, 5, rng);

    AttentionTrace trace;
    attention_forward(p, states, query, &trace);
    zero(grads);
    std::vector<Vec> d_states(states.size(), Vec(4, 0.0));
    attention_backward(p, states, trace, w[0], g, d_states);
    const auto loss = [&] { return project({attention_forward(p, states, query).attended}, w); };
    const auto r = check_gradients(params, grads, loss, all_coordinates(params), 1e-4, Stencil::central4);
    CHECK(r.max_relative_error < kGradTolerance);

    // Gradient with respect to the states, checked one coordinate at a time.
    for (std::size_t i = 0; i < states.size(); ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        const double x = states[i][j];
        const double e = 1e-5;
        states[i][j] = x + e;
        const double up = loss();
        states[i][j] = x - e;
        const double down = loss();
        states[i][j] = x;
        CHECK(relative_error(d_states[i][j], (up - down) / (2 * e)) < 1e-6);
      }
    }
  }
}

TEST_CASE("gradient check detects a wrong gradient") {
  Tensor x = filled({2}, {1.0, 2.0});
  Tensor g = filled({2}, {2.0, 4.5});  // true gradient of x0^2 + x1^2 is (2, 4)
  ParamList params{{"x", &x}}, grads{{"x", &g}};
  const auto loss = [&] { return x[0] * x[0] + x[1] * x[1]; };
  const auto r = check_gradients(params, grads, loss, all_coordinates(params));
  CHECK(r.max_relative_error == doctest::Approx(0.5 / 4.5).epsilon(1e-6));
  CHECK(relative_error(0.0, 1e-9) < 1e-2);
}

TEST_CASE("adam: first step moves each parameter by the learning rate") {
  Tensor w = filled({3}, {1.0, -1.0, 0.5});
  Tensor g = filled({3}, {0.2, -3.0, 0.0});
  ParamList params{{"w", &w}}, grads{{"w", &g}};
  Adam adam(AdamConfig{0.01}, params);
  adam.step(params, grads);
  CHECK(w[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-0.99).epsilon(1e-6));
  CHECK(w[2] == 0.5);
  CHECK(adam.steps() == 1);

  Adam frozen(AdamConfig{0.0}, params);
  const Tensor before = w;
  frozen.step(params, grads);
  CHECK(w == before);
}

TEST_CASE("clip_global_norm") {
  Tensor a = filled({2}, {3.0, 0.0});
  Tensor b = filled({1}, {4.0});
  ParamList grads{{"a", &a}, {"b", &b}};
  CHECK(clip_global_norm(grads, 10.0) == 5.0);
  CHECK(a[0] == 3.0);
  CHECK(clip_global_norm(grads, 1.0) == 5.0);
  CHECK(a[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(b[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("tensor checkpoints round-trip exactly and validate shapes") {
  std::mt19937_64 rng(2);
  GruLayerParams p = GruLayerParams::create(3, 2, true);
  p.init(rng);
  ParamList params;
  p.collect("gru", params);
  std::stringstream buf;
  write_tensors(buf, params);

  GruLayerParams q = GruLayerParams::create(3, 2, true);
  ParamList loaded;
  q.collect("gru", loaded);
  std::stringstream in(buf.str());
  read_tensors(in, loaded);
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(*params[i].tensor == *loaded[i].tensor);

  GruLayerParams wrong = GruLayerParams::create(3, 3, true);
  ParamList wrong_list;
  wrong.collect("gru", wrong_list);
  std::stringstream again(buf.str());
  CHECK_THROWS(read_tensors(again, wrong_list));
}
