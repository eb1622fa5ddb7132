#include <gtest/gtest.h>

#include <cmath>

#include "localgrad/error.hpp"
#include "localgrad/gradcheck.hpp"
#include "localgrad/ops.hpp"
#include "test_util.hpp"

using namespace localgrad;
using localgrad::test_util::random_tensor;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Reduces any tensor to a scalar with non-uniform weights so every output
// coordinate carries a distinct gradient.
Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(t, random_tensor(t.shape(), rng, 0.5, 1.5)));
}

}  // namespace

TEST(Primitives, ReluZeroesNegatives) {
  EXPECT_EQ(vec(relu(Tensor::vector({-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
}

TEST(Primitives, MatmulIdentity) {
  const Tensor b = Tensor::matrix({{3, 4}, {5, 6}});
  EXPECT_TRUE(matmul(Tensor::matrix({{1, 0}, {0, 1}}), b).same_values(b));
}

TEST(Primitives, ConvAllOnes) {
  const Tensor y = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 2, 2}, 1.0));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(vec(y), (std::vector<double>{4, 4, 4, 4}));
}

TEST(Primitives, ConvMatchesDirectLoops) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 3, 5, 4}, rng);
  const Tensor w = random_tensor({2, 3, 3, 3}, rng);
  const Tensor y = conv2d(x, w, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 5, 4}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 2; ++o)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) {
          double expect = 0.0;
          for (std::size_t c = 0; c < 3; ++c)
            for (int u = 0; u < 3; ++u)
              for (int v = 0; v < 3; ++v) {
                const int r = i + u - 1, s = j + v - 1;
                if (r < 0 || r >= 5 || s < 0 || s >= 4) continue;
                expect += w[((o * 3 + c) * 3 + u) * 3 + v] * x[((n * 3 + c) * 5 + r) * 4 + s];
              }
          EXPECT_NEAR(y[((n * 2 + o) * 5 + i) * 4 + j], expect, 1e-12);
        }
}

TEST(Primitives, ShapeErrorsNameThePrimitive) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[4 x 2]"), std::string::npos);
  }
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({1, 3, 2, 2})), ShapeError);
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(avgpool_global(Tensor::zeros({2, 3})), ShapeError);
}

TEST(Primitives, BiasBroadcastOverChannels) {
  const Tensor y = add(Tensor::zeros({2, 3, 2, 2}), Tensor::vector({1, 2, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[(n * 3 + c) * 4 + i], static_cast<double>(c + 1));
}

TEST(CrossEntropy, UniformLogits) {
  const int label = 0;
  EXPECT_NEAR(softmax_cross_entropy(Tensor::matrix({{0, 0}}), {&label, 1}).item(), std::log(2.0), 1e-15);
}

TEST(CrossEntropy, SaturatedLogitsStayFinite) {
  const int label = 0;
  const double v = softmax_cross_entropy(Tensor::matrix({{1000, 0}}), {&label, 1}).item();
  EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(CrossEntropy, MatchesHighPrecisionOracle) {
  // -log softmax([0.2, -0.4, 0.1])[2], evaluated with 40-digit arithmetic.
  constexpr double kOracle = 0.99757632633487158183;
  const int label = 2;
  EXPECT_NEAR(softmax_cross_entropy(Tensor::matrix({{0.2, -0.4, 0.1}}), {&label, 1}).item(), kOracle, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRangeNamesIndex) {
  const std::vector<int> labels{0, 3};
  try {
    softmax_cross_entropy(Tensor::zeros({2, 3}), labels);
    FAIL() << "expected out_of_range";
  } catch (const std::out_of_range& e) {
    EXPECT_NE(std::string(e.what()).find("label 3 at index 1"), std::string::npos);
  }
}

TEST(StopGradient, ForwardTransparent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Parameter x("x", random_tensor({3, 4}, rng));
    Parameter w("w", random_tensor({4, 2}, rng));
    Tape tape;
    const Tensor a = relu(matmul(tape.watch(x), tape.watch(w)));
    const Tensor b = relu(matmul(stop_gradient(tape.watch(x)), tape.watch(w)));
    EXPECT_TRUE(a.same_values(b));
  }
}

TEST(StopGradient, BlocksGradientToInput) {
  Parameter x("x", Tensor::vector({1, -2, 3}));
  Tape tape;
  const Tensor loss = sum(stop_gradient(tape.watch(x)));
  tape.backward(loss);
  EXPECT_TRUE(test_util::all_zero(x.grad()));
  EXPECT_EQ(tape.boundary_count(), 1u);
}

TEST(StopGradient, GradientReachesOtherFactor) {
  std::mt19937_64 rng(5);
  Parameter w("w", random_tensor({5}, rng));
  Parameter x("x", random_tensor({5}, rng));
  auto loss_fn = [&](Tape& tape) { return sum(mul(tape.watch(w), stop_gradient(tape.watch(x)))); };
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }
  EXPECT_TRUE(test_util::all_zero(x.grad()));
  // Central differences on w recover x.
  const double h = 1e-5;
  for (std::size_t i = 0; i < 5; ++i) {
    const double original = w.value()[i];
    w.mutable_value()[i] = original + h;
    double plus = 0, minus = 0;
    {
      Tape t;
      plus = loss_fn(t).item();
    }
    w.mutable_value()[i] = original - h;
    {
      Tape t;
      minus = loss_fn(t).item();
    }
    w.mutable_value()[i] = original;
    EXPECT_NEAR(w.grad()[i], (plus - minus) / (2 * h), 1e-9);
    EXPECT_EQ(w.grad()[i], x.value()[i]);
  }
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(1);
  Parameter theta("theta", random_tensor({2, 3, 2}, rng));
  Tape tape;
  tape.backward(sum(tape.watch(theta)));
  for (double g : theta.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Parameter theta("theta", Tensor::zeros({2}));
  Tape tape;
  EXPECT_THROW(tape.backward(tape.watch(theta)), ShapeError);
}

TEST(Backward, AccumulatesAcrossCalls) {
  Parameter theta("theta", Tensor::vector({1, 2}));
  Tape tape;
  const Tensor t = tape.watch(theta);
  tape.backward(sum(t));
  tape.backward(sum(scale(t, 2.0)));
  EXPECT_EQ(theta.grad()[0], 3.0);
  theta.zero_grad();
  EXPECT_TRUE(test_util::all_zero(theta.grad()));
}

TEST(Backward, TwoLayerPerceptronMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  Parameter w1("w1", random_tensor({4, 6}, rng)), b1("b1", random_tensor({6}, rng));
  Parameter w2("w2", random_tensor({6, 3}, rng)), b2("b2", random_tensor({3}, rng));
  const Tensor x = random_tensor({5, 4}, rng);
  const std::vector<int> y{0, 2, 1, 1, 0};
  auto loss_fn = [&](Tape& t) {
    const Tensor h = relu(linear(x, t.watch(w1), t.watch(b1)));
    return softmax_cross_entropy(linear(h, t.watch(w2), t.watch(b2)), y);
  };
  std::vector<Parameter*> params{&w1, &b1, &w2, &b2};
  const auto report = grad_check(loss_fn, params, {.tolerance = 1e-6, .step = 1e-5});
  EXPECT_TRUE(report.passed) << report.max_relative_error << " at " << report.worst_location;
  EXPECT_GT(report.checked, 50u);
}

TEST(GradCheck, LinearLayerPasses) {
  std::mt19937_64 rng(2);
  Parameter w("w", random_tensor({3, 2}, rng)), b("b", random_tensor({2}, rng));
  const Tensor x = random_tensor({4, 3}, rng);
  std::vector<Parameter*> params{&w, &b};
  const auto report = grad_check([&](Tape& t) { return weighted_sum(linear(x, t.watch(w), t.watch(b))); }, params);
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.checked, 8u);
}

TEST(GradCheck, ExcludesReluKink) {
  Parameter theta("theta", Tensor::vector({0.0, 1.5, -0.7}));
  std::vector<Parameter*> params{&theta};
  const auto report = grad_check([&](Tape& t) { return weighted_sum(relu(t.watch(theta))); }, params);
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.excluded, 1u);
  EXPECT_EQ(report.checked, 2u);
}

TEST(GradCheck, CatchesCorruptedRule) {
  std::mt19937_64 rng(4);
  Parameter theta("theta", random_tensor({4}, rng));
  auto broken_square = [](const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= v;
    Tensor y(x.shape(), std::move(out));
    // d(x^2)/dx is 2x; record 3x instead.
    return common_tape({&x})->record(y, {&x}, [x = x.constant()](auto g, auto sinks) {
      for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i] * 3.0 * x[i];
    });
  };
  std::vector<Parameter*> params{&theta};
  const auto report = grad_check([&](Tape& t) { return sum(broken_square(t.watch(theta))); }, params);
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_relative_error, 1e-5);
}

TEST(GradCheck, ReportsNonFiniteLocation) {
  Parameter theta("theta", Tensor::vector({1.0, std::nan("")}));
  std::vector<Parameter*> params{&theta};
  const auto report = grad_check([&](Tape& t) { return sum(t.watch(theta)); }, params);
  EXPECT_FALSE(report.passed);
  EXPECT_FALSE(report.failure.empty());
}

// Every primitive under central differences, away from relu kinks.
TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(21);
  Parameter a("a", random_tensor({3, 4}, rng)), b("b", random_tensor({4, 2}, rng));
  Parameter c("c", random_tensor({3, 4}, rng)), v("v", random_tensor({4}, rng));
  Parameter img("img", random_tensor({2, 2, 4, 4}, rng)), k("k", random_tensor({3, 2, 3, 3}, rng));
  Parameter cb("cb", random_tensor({3}, rng)), ch("ch", random_tensor({2}, rng));
  const std::vector<int> labels{1, 0, 1};

  struct Case {
    const char* name;
    std::function<Tensor(Tape&)> fn;
    std::vector<Parameter*> params;
  };
  const std::vector<Case> cases{
      {"matmul", [&](Tape& t) { return weighted_sum(matmul(t.watch(a), t.watch(b))); }, {&a, &b}},
      {"add", [&](Tape& t) { return weighted_sum(add(t.watch(a), t.watch(c))); }, {&a, &c}},
      {"add_bias", [&](Tape& t) { return weighted_sum(add(t.watch(a), t.watch(v))); }, {&a, &v}},
      {"add_channel_bias", [&](Tape& t) { return weighted_sum(add(t.watch(img), t.watch(ch))); }, {&img, &ch}},
      {"mul", [&](Tape& t) { return weighted_sum(mul(t.watch(a), t.watch(c))); }, {&a, &c}},
      {"relu", [&](Tape& t) { return weighted_sum(relu(t.watch(a))); }, {&a}},
      {"conv2d", [&](Tape& t) { return weighted_sum(conv2d(t.watch(img), t.watch(k))); }, {&img, &k}},
      {"conv2d_same", [&](Tape& t) { return weighted_sum(add(conv2d(t.watch(img), t.watch(k), 1), t.watch(cb))); },
       {&img, &k, &cb}},
      {"avgpool_global", [&](Tape& t) { return weighted_sum(avgpool_global(t.watch(img))); }, {&img}},
      {"flatten", [&](Tape& t) { return weighted_sum(flatten(t.watch(img))); }, {&img}},
      {"scale", [&](Tape& t) { return weighted_sum(scale(t.watch(a), -1.7)); }, {&a}},
      {"sum", [&](Tape& t) { return sum(t.watch(a)); }, {&a}},
      {"softmax_cross_entropy",
       [&](Tape& t) { return softmax_cross_entropy(matmul(t.watch(a), t.watch(b)), labels); }, {&a, &b}},
  };
  for (const auto& tc : cases) {
    const auto report = grad_check(tc.fn, tc.params);
    EXPECT_TRUE(report.passed) << tc.name << ": " << report.max_relative_error << " at " << report.worst_location;
    EXPECT_GT(report.checked, 0u) << tc.name;
  }
}

TEST(Determinism, SameSeedSameValuesAndGrads) {
  auto run = [](std::vector<double>& grads) {
    std::mt19937_64 rng(77);
    Parameter w("w", random_tensor({6, 5}, rng)), b("b", random_tensor({5}, rng));
    const Tensor x = random_tensor({8, 6}, rng);
    const std::vector<int> y{0, 1, 2, 3, 4, 0, 1, 2};
    Tape tape;
    const Tensor loss = softmax_cross_entropy(relu(linear(x, tape.watch(w), tape.watch(b))), y);
    tape.backward(loss);
    grads.assign(w.grad().begin(), w.grad().end());
    grads.insert(grads.end(), b.grad().begin(), b.grad().end());
    return loss.item();
  };
  std::vector<double> g1, g2;
  const double l1 = run(g1), l2 = run(g2);
  EXPECT_EQ(std::bit_cast<std::uint64_t>(l1), std::bit_cast<std::uint64_t>(l2));
  EXPECT_EQ(g1, g2);
}

// Random chains with a boundary at a random depth: every parameter before the
// boundary gets exactly zero, every parameter after it gets something.
TEST(Isolation, RandomChainsProperty) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t depth = 2 + seed % 5;
    const std::size_t cut = 1 + rng() % (depth - 1);
    std::vector<Parameter> ws;
    for (std::size_t i = 0; i < depth; ++i) ws.emplace_back("w" + std::to_string(i), random_tensor({4, 4}, rng));
    Tape tape;
    Tensor h = random_tensor({3, 4}, rng);
    for (std::size_t i = 0; i < depth; ++i) {
      if (i == cut) h = stop_gradient(h);
      h = matmul(h, tape.watch(ws[i]));
      if (rng() % 2) h = relu(h);
    }
    tape.backward(sum(scale(h, 1.0)));
    for (std::size_t i = 0; i < cut; ++i) EXPECT_TRUE(test_util::all_zero(ws[i].grad())) << "seed " << seed;
  }
}

TEST(Tape, ConstantsRecordNothing) {
  const Tensor y = relu(matmul(Tensor::zeros({2, 2}), Tensor::zeros({2, 2})));
  EXPECT_FALSE(y.has_node());
}
