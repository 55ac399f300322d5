#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

#include "sentinel/error.hpp"
#include "sentinel/neuralnet.hpp"
#include "support/fixtures.hpp"

using namespace sentinel;
using namespace sentinel::nn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data()) v = u(rng);
  return m;
}

// Mean squared error of a linear model on a fixed batch.
struct LinearProblem {
  Matrix x, y;
  Parameters params;

  explicit LinearProblem(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    x = random_matrix(16, 3, rng);
    Matrix w_true(3, 1, std::vector<double>{0.5, -1.0, 2.0});
    y = Matrix(16, 1);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t k = 0; k < 3; ++k) y(i, 0) += x(i, k) * w_true(k, 0);
    params.add_glorot("w", 3, 1, rng);
    params.add_zeros("b", 1, 1);
  }

  LossFn loss() const {
    return [this](Tape& t) {
      Var pred = add_row(matmul(t.constant(x), t.param("w")), t.param("b"));
      Var err = sub(pred, t.constant(y));
      return scale(sum_all(huber(err, 10.0)), 1.0 / 16.0);
    };
  }
};

float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                       std::uint32_t(p[3]) << 24;
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

TEST_CASE("huber values, continuity and symmetry") {
  CHECK(huber(0.5, 1.0) == doctest::Approx(0.125));
  CHECK(huber(1.0, 1.0) == doctest::Approx(0.5));
  CHECK(huber(2.0, 1.0) == doctest::Approx(1.5));
  CHECK(huber(0.0, 1.0) == 0.0);
  for (double delta : {0.1, 1.0, 3.0}) {
    const double h = 1e-9;
    CHECK(huber(delta - h, delta) == doctest::Approx(huber(delta + h, delta)).epsilon(1e-7));
    CHECK(huber_derivative(delta - h, delta) == doctest::Approx(huber_derivative(delta + h, delta)).epsilon(1e-7));
    for (double a : {0.01, 0.5, 2.0, 40.0}) {
      CHECK(huber(a, delta) == huber(-a, delta));
      CHECK(huber_derivative(a, delta) == -huber_derivative(-a, delta));
    }
  }
}

TEST_CASE("contrastive loss values and monotonicity") {
  const LossConfig cfg;
  CHECK(contrastive_loss(0.0, 0, cfg) == 0.0);
  CHECK(contrastive_loss(2.0, 1, cfg) == 0.0);
  CHECK(contrastive_loss(1.0, 0, cfg) == doctest::Approx(0.5));
  double prev0 = -1, prev1 = std::numeric_limits<double>::infinity();
  for (double d = 0.0; d <= 2.0; d += 0.05) {
    CHECK(contrastive_loss(d, 0, cfg) >= prev0);
    CHECK(contrastive_loss(d, 1, cfg) <= prev1);
    prev0 = contrastive_loss(d, 0, cfg);
    prev1 = contrastive_loss(d, 1, cfg);
  }

  LossConfig bad;
  bad.delta = 0;
  CHECK_THROWS_AS(validate_loss_config(bad), PreconditionError);
  bad = {};
  bad.target_separation = 2.5;
  CHECK_THROWS_AS(validate_loss_config(bad), PreconditionError);
  bad = {};
  bad.phi = 1.0;
  CHECK_THROWS_AS(validate_loss_config(bad), PreconditionError);
  CHECK_NOTHROW(validate_loss_config(LossConfig{}));
}

TEST_CASE("identical inputs in a same-group pair give zero loss and zero gradient") {
  std::mt19937_64 rng(2);
  Parameters p;
  p.add_glorot("w", 4, 3, rng);
  const Matrix x = random_matrix(1, 4, rng);
  const LossFn loss = [&](Tape& t) {
    Var a = l2_normalize_rows(matmul(t.constant(x), t.param("w")));
    Var b = l2_normalize_rows(matmul(t.constant(x), t.param("w")));
    return contrastive_loss(distance(a, b), 0, LossConfig{});
  };
  double value = -1;
  const Gradients g = compute_gradients(p, loss, &value);
  CHECK(value == 0.0);
  for (double v : g.at("w").data()) CHECK(v == 0.0);

  // A zero gradient leaves Adam's parameters exactly where they were.
  const Parameters before = p;
  AdamState state;
  train_step(p, state, loss);
  CHECK(p == before);
}

TEST_CASE("first Adam step matches the closed form") {
  LinearProblem prob(3);
  const Parameters before = prob.params;
  const Gradients g = compute_gradients(before, prob.loss());
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  AdamState state;
  train_step(prob.params, state, prob.loss(), cfg);
  CHECK(state.step == 1);
  for (const auto& [name, m] : before.tensors()) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      // Bias-corrected moments after one step are g and g^2.
      const double gi = g.at(name).data()[i];
      const double want = m.data()[i] - cfg.learning_rate * gi / (std::fabs(gi) + cfg.epsilon);
      CHECK(prob.params.at(name).data()[i] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("training lowers the loss and is deterministic") {
  LinearProblem a(4), b(4);
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  AdamState sa, sb;
  const double start = evaluate_loss(a.params, a.loss());
  for (int i = 0; i < 100; ++i) {
    train_step(a.params, sa, a.loss(), cfg);
    train_step(b.params, sb, b.loss(), cfg);
  }
  CHECK(evaluate_loss(a.params, a.loss()) < 0.1 * start);
  CHECK(a.params == b.params);
}

TEST_CASE("non-finite loss is rejected and parameters stay put") {
  LinearProblem prob(5);
  const Parameters before = prob.params;
  AdamState state;
  const LossFn nan_loss = [&](Tape& t) {
    return scale(sum_all(t.param("w")), std::numeric_limits<double>::quiet_NaN());
  };
  CHECK_THROWS_AS(train_step(prob.params, state, nan_loss), NonFiniteLoss);
  CHECK(prob.params == before);
  CHECK(state.step == 0);
}

TEST_CASE("gradient check on the linear model") {
  LinearProblem prob(6);
  const auto r = grad_check(prob.params, prob.loss(), 1e-6);
  CHECK(r.coordinates == prob.params.scalar_count());
  CHECK(r.max_relative_error <= 1e-6);
  CHECK(r.max_abs_analytic > 0.0);
}

TEST_CASE("a model whose output ignores its parameters has zero gradient") {
  LinearProblem prob(7);
  const Matrix c(1, 1, 3.0);
  const LossFn loss = [&](Tape& t) {
    t.param("w");
    return sum_all(t.constant(c));
  };
  const auto r = grad_check(prob.params, loss, 1e-6);
  CHECK(r.max_abs_analytic == 0.0);
  CHECK(r.max_relative_error == 0.0);
  const Gradients g = compute_gradients(prob.params, loss);
  CHECK(g.contains("w"));
  CHECK_FALSE(g.contains("b"));
}

TEST_CASE("op gradients agree with central differences") {
  std::mt19937_64 rng(8);
  Parameters p;
  p.add("a", random_matrix(5, 4, rng));
  p.add("b", random_matrix(4, 3, rng));
  p.add("r", random_matrix(1, 3, rng));
  p.add("v", random_matrix(1, 4, rng));
  // Away from zero so relu and leaky_relu kinks are not straddled.
  p.add("pos", random_matrix(5, 4, rng, 0.2, 1.0));
  const std::vector<std::size_t> seg{0, 1, 0, 2, 1};
  const std::vector<double> labels{1, 0, 1, 1, 0};

  const std::vector<std::pair<const char*, LossFn>> cases{
      {"matmul+add_row+tanh", [&](Tape& t) { return sum_all(tanh(add_row(matmul(t.param("a"), t.param("b")), t.param("r")))); }},
      {"relu", [&](Tape& t) { return sum_all(relu(scale(t.param("pos"), 1.5))); }},
      {"leaky_relu", [&](Tape& t) { return sum_all(leaky_relu(scale(t.param("pos"), -2.0))); }},
      {"gather+slice+concat",
       [&](Tape& t) {
         Var g = gather_rows(t.param("a"), {4, 0, 0, 2});
         Var s = slice_cols(g, 1, 2);
         Var c = concat_cols({s, tanh(s)});
         return sum_all(tanh(concat_rows({c, scale(c, 0.3)})));
       }},
      {"rowdot+segment softmax+weighted sum",
       [&](Tape& t) {
         Var scores = rowdot(t.param("a"), t.param("v"));
         Var w = segment_softmax(scores, seg, 3);
         Var out = segment_weighted_sum(tanh(t.param("a")), w, seg, 3);
         return sum_all(tanh(out));
       }},
      {"l2 normalize + distance",
       [&](Tape& t) {
         Var n = l2_normalize_rows(t.param("a"));
         return distance(gather_rows(n, {0}), gather_rows(n, {3}));
       }},
      {"huber + mean",
       [&](Tape& t) {
         Var d = distance(t.param("r"), scale(t.param("r"), 0.2));
         return mean_of({huber(scale(sum_all(t.param("a")), 0.3), 1.0), contrastive_loss(d, 1, LossConfig{})});
       }},
      {"logistic", [&](Tape& t) { return logistic_loss(matmul(t.param("a"), tanh(slice_cols(t.param("b"), 0, 1))), labels); }},
  };
  for (const auto& [name, loss] : cases) {
    CAPTURE(name);
    const auto r = grad_check(p, loss, 1e-6, 200);
    CHECK(r.max_relative_error <= 1e-5);
    CHECK(r.max_abs_analytic > 0.0);
  }
}

TEST_CASE("logistic loss and sigmoid values") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) == doctest::Approx(0.0));
  Tape t;
  const std::vector<double> labels{1.0, 0.0};
  Var l = logistic_loss(t.constant(Matrix(2, 1, std::vector<double>{0.0, 0.0})), labels);
  CHECK(l.scalar() == doctest::Approx(std::log(2.0)));
  Var big = logistic_loss(t.constant(Matrix(2, 1, std::vector<double>{-1000.0, 1000.0})), labels);
  CHECK(std::isfinite(big.scalar()));
  CHECK(big.scalar() == doctest::Approx(1000.0));
}

TEST_CASE("segment softmax sums to one per segment") {
  Tape t;
  std::mt19937_64 rng(9);
  Var s = t.constant(random_matrix(6, 1, rng, -50, 50));
  const std::vector<std::size_t> seg{2, 0, 2, 1, 0, 2};
  const Matrix& w = segment_softmax(s, seg, 3).value();
  double sums[3] = {0, 0, 0};
  for (std::size_t i = 0; i < 6; ++i) sums[seg[i]] += w(i, 0);
  for (double v : sums) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("parameters persist as little-endian float32") {
  std::mt19937_64 rng(10);
  Parameters p;
  p.add_glorot("layer.w", 3, 5, rng);
  p.add("layer.b", Matrix(1, 5, std::vector<double>{1.0, -2.0, 0.1, 1e-8, 3.5}));
  const auto dir = fixtures::temp_dir("params");
  save_parameters(dir, p);
  const Parameters q = load_parameters(dir);
  REQUIRE(q.tensors().size() == 2);
  for (const auto& [name, m] : p.tensors()) {
    REQUIRE(q.at(name).same_shape(m));
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(q.at(name).data()[i] == double(float(m.data()[i])));
  }

  // Decode the blob by hand through the manifest offsets.
  const auto manifest = nlohmann::json::parse(std::ifstream(dir / "params.json"));
  std::ifstream blob(dir / "params.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  CHECK(bytes.size() == 4 * p.scalar_count());
  for (const auto& t : manifest.at("tensors")) {
    const Matrix& m = p.at(t.at("name").get<std::string>());
    const std::size_t off = t.at("offset").get<std::size_t>();
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(read_f32_le(&bytes[off + 4 * i]) == float(m.data()[i]));
  }

  // Truncated blob is refused.
  std::filesystem::resize_file(dir / "params.bin", bytes.size() - 4);
  CHECK_THROWS_AS(load_parameters(dir), Error);
  CHECK_THROWS_AS(load_parameters(dir, "absent"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("glorot init stays in range and shapes are checked") {
  std::mt19937_64 rng(11);
  Parameters p;
  const Matrix& w = p.add_glorot("w", 20, 30, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  for (double v : w.data()) CHECK(std::fabs(v) <= bound);
  CHECK_THROWS(p.add_zeros("w", 1, 1));
  Tape t(&p);
  CHECK_THROWS(matmul(t.param("w"), t.param("w")));
  CHECK_THROWS(t.param("missing"));
}
