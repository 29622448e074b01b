#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dap/autodiff.hpp"
#include "dap/optim.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

namespace dap {
namespace {

using testing::check_leaves;
using testing::op_cases;
using testing::project;
using testing::random_tensor;

constexpr int kTrials = 20;
constexpr double kTol = 1e-5;

TEST(Ops, SoftmaxOfZerosIsUniform) {
  Tape tape;
  Var y = softmax(tape.constant(Tensor::row({0, 0, 0})));
  for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Ops, AddZerosIsIdentity) {
  Rng rng(3);
  Tensor x = random_tensor(4, 5, rng);
  Tape tape;
  Var y = add(tape.constant(x), tape.constant(Tensor::zeros(4, 5)));
  EXPECT_EQ(y.value(), x);
}

TEST(Ops, MatmulMatchesNaiveTripleLoop) {
  for (int seed = 0; seed < kTrials; ++seed) {
    Rng rng(100 + seed);
    Tensor a = random_tensor(2, 3, rng), b = random_tensor(3, 4, rng);
    Tape tape;
    Var c = matmul(tape.constant(a), tape.constant(b));
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double ref = 0.0;
        for (std::size_t k = 0; k < 3; ++k) ref += a.at(i, k) * b.at(k, j);
        EXPECT_LE(std::abs(c.value().at(i, j) - ref), 1e-12 * std::max(1.0, std::abs(ref)));
      }
  }
}

TEST(Ops, ShapeErrorNamesOpAndDims) {
  Tape tape;
  Var a = tape.constant(Tensor::zeros(2, 3));
  Var b = tape.constant(Tensor::zeros(2, 3));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
  }
  EXPECT_THROW(add(a, tape.constant(Tensor::zeros(3, 3))), ShapeError);
  EXPECT_THROW(layernorm(a, tape.constant(Tensor::zeros(1, 2)), tape.constant(Tensor::zeros(1, 3))),
               ShapeError);
  const int bad[] = {0, 7};
  EXPECT_THROW(cross_entropy(a, bad), ShapeError);
  EXPECT_THROW(slice_rows(a, 1, 2), ShapeError);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({1, 2, 3}));
  tape.backward(sum(mul(x, x)));
  auto g = x.grad();
  ASSERT_EQ(g.size(), 3u);
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], 4.0);
  EXPECT_DOUBLE_EQ(g[2], 6.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({1, 2}));
  EXPECT_THROW(tape.backward(scale(x, 2.0)), ContractError);
  Tape empty;
  Tape other;
  Var y = other.leaf(Tensor::row({1}));
  EXPECT_THROW(empty.backward(y), ContractError);
}

TEST(Backward, ConstantsNeverAccumulate) {
  Tape tape;
  Var c = tape.constant(Tensor::row({1, 2}));
  Var x = tape.leaf(Tensor::row({3, 4}));
  tape.backward(sum(mul(c, x)));
  EXPECT_TRUE(c.grad().empty());
  EXPECT_EQ(x.grad().size(), 2u);
}

// ---------------------------------------------------------------------------
// Finite-difference checks, >= 20 seeded trials per op kind.

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto c = op_cases()[GetParam()];
  for (int seed = 0; seed < kTrials; ++seed) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(seed), c.name));
    const double err = check_leaves(c.inputs(rng), c.loss);
    EXPECT_LT(err, kTol) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, op_cases().size()),
                         [](const auto& info) { return std::string(op_cases()[info.param].name); });

// ---------------------------------------------------------------------------
// Properties

TEST(Properties, SoftmaxRowsAreDistributions) {
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Tape tape;
    Var y = softmax(tape.constant(random_tensor(4, 7, rng, 20.0)));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(y.value().at(r, c), 0.0);
        total += y.value().at(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Properties, CrossEntropyLimits) {
  for (std::size_t classes : {2u, 5u, 12u}) {
    Tape tape;
    const int target[] = {1};
    Var uniform = cross_entropy(tape.constant(Tensor::zeros(1, classes)), target);
    EXPECT_NEAR(uniform.value()[0], std::log(static_cast<double>(classes)), 1e-9);
    Tensor peaked = Tensor::zeros(1, classes);
    peaked[1] = 60.0;
    Var confident = cross_entropy(tape.constant(peaked), target);
    EXPECT_LT(confident.value()[0], 1e-20);
  }
}

TEST(Properties, DeterministicValuesAndGradients) {
  auto run = [] {
    Rng rng(42);
    Tape tape;
    Var x = tape.leaf(random_tensor(5, 8, rng));
    Var w = tape.leaf(random_tensor(8, 8, rng));
    Var g = tape.leaf(random_tensor(1, 8, rng));
    Var b = tape.leaf(random_tensor(1, 8, rng));
    Var y = softmax(matmul(gelu(layernorm(x, g, b)), w));
    Var loss = project(tape, y, 9);
    tape.backward(loss);
    std::vector<double> out(y.value().data().begin(), y.value().data().end());
    for (Var v : {x, w, g, b}) out.insert(out.end(), v.grad().begin(), v.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Optimizer, SgdStep) {
  Parameter p("p", Tensor::row({1.0}));
  p.value.accumulate_grad(std::vector<double>{2.0});
  Optimizer opt({UpdateRule::kSgd, 0.1});
  Parameter* list[] = {&p};
  opt.step(list);
  EXPECT_DOUBLE_EQ(p.value[0], 0.8);
}

TEST(Optimizer, AdamMatchesHandRecursion) {
  const std::vector<double> grads = {0.5, -1.25, 2.0, 0.0, 3.5, -0.75};
  OptimizerConfig cfg;
  cfg.lr = 0.01;
  Parameter p("p", Tensor::row({0.3}));
  Optimizer opt(cfg);
  double x = 0.3, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    p.value.clear_grad();
    p.value.accumulate_grad(std::vector<double>{grads[t - 1]});
    Parameter* list[] = {&p};
    opt.step(list);
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.value[0], x, 1e-10) << "step " << t;
  }
}

TEST(Optimizer, FrozenParameterIsBitwiseUnchanged) {
  Parameter frozen("backbone.w", Tensor::row({0.1, -0.2, 0.3}), true);
  Parameter live("head.w", Tensor::row({1.0, 2.0, 3.0}));
  const Tensor before = frozen.value;
  Tape tape;
  Var loss = sum(mul(tape.param(frozen), tape.param(live)));
  tape.backward(loss);
  EXPECT_FALSE(frozen.value.has_grad());
  Optimizer opt({});
  Parameter* list[] = {&frozen, &live};
  opt.step(list);
  EXPECT_EQ(frozen.value, before);
  EXPECT_NE(live.value[0], 1.0);
}

TEST(Optimizer, AllFrozenLossChangesNothing) {
  Parameter a("backbone.a", Tensor::row({0.5, 1.5}), true);
  const Tensor before = a.value;
  Tape tape;
  tape.backward(sum(mul(tape.param(a), tape.param(a))));
  Optimizer opt({});
  Parameter* list[] = {&a};
  opt.step(list);
  EXPECT_EQ(a.value, before);
}

TEST(Optimizer, MissingGradientIsContractError) {
  Parameter p("head.w", Tensor::row({1.0}));
  Optimizer opt({});
  Parameter* list[] = {&p};
  EXPECT_THROW(opt.step(list), ContractError);
  EXPECT_THROW(Optimizer({UpdateRule::kSgd, 0.0}), ContractError);
}

}  // namespace
}  // namespace dap
