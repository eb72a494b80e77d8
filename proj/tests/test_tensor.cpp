#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ccv/graph.hpp"
#include "ccv/optim.hpp"
#include "ccv/rng.hpp"
#include "ccv/tensor.hpp"
#include "gradcheck.hpp"

using ccv::Graph;
using ccv::SplitMix64;
using ccv::Tensor;
using ccvtest::gradcheck;

namespace {

template <typename F>
std::string thrown_message(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

Tensor<double> random_tensor(std::vector<int> shape, SplitMix64& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor<double> g_mean(Graph<double>& g, std::vector<Tensor<double>>& ls) {
  return g.mean_reduce(g.sigmoid(ls[0]));
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor<float> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.data().size() == 6);

  t.ensure_grad();
  CHECK(t.grad().size() == 6);
  for (float g : t.grad()) CHECK(g == 0.0f);

  t.grad()[2] = 5.0f;
  t.zero_grad();
  for (float g : t.grad()) CHECK(g == 0.0f);

  CHECK_THROWS_AS(Tensor<float>({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1.0f}), std::invalid_argument);
}

TEST_CASE("conv2d identity with 1x1 unit kernel") {
  Graph<float> g;
  SplitMix64 rng(1);
  Tensor<float> x({3, 5, 5});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-2, 2));
  Tensor<float> k = Tensor<float>::zeros({3, 3, 1, 1});
  // Identity mapping channel-by-channel.
  for (int c = 0; c < 3; ++c) k.data()[c * 3 + c] = 1.0f;
  Tensor<float> b = Tensor<float>::zeros({3});
  Tensor<float> y = g.conv2d(x, k, b, 0);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d all-ones 3x3 kernel sums the neighbourhood") {
  Graph<float> g;
  const float c = 1.75f;
  Tensor<float> x = Tensor<float>::full({1, 5, 5}, c);
  Tensor<float> k = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  Tensor<float> b = Tensor<float>::zeros({1});
  Tensor<float> y = g.conv2d(x, k, b, 0);
  REQUIRE(y.shape() == std::vector<int>{1, 3, 3});
  // Interior of a constant image: 9 * c everywhere in the valid output.
  for (float v : y.data()) CHECK(v == doctest::Approx(9 * c).epsilon(1e-6));
}

TEST_CASE("conv2d gradient matches finite differences (1x2x5x5)") {
  SplitMix64 rng(7);
  auto x = random_tensor({2, 5, 5}, rng);
  auto k = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  auto b = random_tensor({3}, rng, -0.2, 0.2);
  auto rep = gradcheck(
      [](Graph<double>& g, std::vector<Tensor<double>>& ls) {
        return g.mean_reduce(g.conv2d(ls[0], ls[1], ls[2], 1));
      },
      {x, k, b});
  INFO(rep.detail);
  CHECK(rep.ok);
  CHECK(rep.max_rel < 1e-6);
}

TEST_CASE("conv2d shape errors name the offending dimension") {
  Graph<float> g;
  Tensor<float> x({2, 5, 5});
  Tensor<float> k({3, 4, 3, 3});
  Tensor<float> b({3});
  auto msg = thrown_message([&] { g.conv2d(x, k, b, 1); });
  CHECK(msg.find("conv2d") != std::string::npos);
  CHECK(msg.find("in-channel") != std::string::npos);

  Tensor<float> keven({3, 2, 2, 2});
  CHECK(thrown_message([&] { g.conv2d(x, keven, b, 0); }).find("odd") != std::string::npos);

  Tensor<float> bbad({4});
  CHECK(thrown_message([&] { g.conv2d(x, Tensor<float>({3, 2, 3, 3}), bbad, 1); })
            .find("bias") != std::string::npos);
}

TEST_CASE("sigmoid values and derivative") {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::from_data({3}, {0.0, 20.0, -20.0});
  Tensor<double> y = g.sigmoid(x);
  CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(y.data()[1] - 1.0) < 1e-8);
  CHECK(std::abs(y.data()[2]) < 1e-8);

  // Derivative at 0 is exactly 0.25.
  Tensor<double> x0 = Tensor<double>::scalar(0.0);
  x0.set_requires_grad(true);
  Graph<double> g2;
  auto loss = g2.sum_reduce(g2.sigmoid(x0));
  g2.backward(loss);
  CHECK(x0.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));

  auto rep = gradcheck(
      [](Graph<double>& gg, std::vector<Tensor<double>>& ls) {
        return g_mean(gg, ls);
      },
      {Tensor<double>::from_data({4}, {-1.5, -0.25, 0.4, 2.0})});
  INFO(rep.detail);
  CHECK(rep.ok);
}

TEST_CASE("mean_reduce examples") {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::from_data({3}, {1, 2, 3});
  CHECK(g.mean_reduce(x).value() == doctest::Approx(2.0).epsilon(1e-15));

  Tensor<double> s = Tensor<double>::scalar(7.25);
  CHECK(g.mean_reduce(s).value() == 7.25);

  Tensor<double> four = Tensor<double>::from_data({4}, {1, 2, 3, 4});
  four.set_requires_grad(true);
  Graph<double> g2;
  auto m = g2.mean_reduce(four);
  g2.backward(m);
  for (double gv : four.grad()) CHECK(gv == 0.25);

  Tensor<double> undef;
  CHECK_THROWS_AS(g.mean_reduce(undef), std::invalid_argument);
}

TEST_CASE("detach blocks gradient flow") {
  Tensor<double> x = Tensor<double>::from_data({4}, {0.5, -1.25, 2.0, 0.125});
  Tensor<double> d = ccv::detach(x);
  // Bit-exact value copy.
  for (int i = 0; i < 4; ++i) CHECK(d.data()[i] == x.data()[i]);

  x.set_requires_grad(true);
  {
    Graph<double> g;
    auto loss = g.mean_reduce(ccv::detach(x));
    g.backward(loss);
    CHECK_FALSE(x.has_grad());
  }
  {
    // Only the live branch counts: d/dx mean(x + detach(x)) = 1/n.
    Graph<double> g;
    auto loss = g.mean_reduce(g.add(x, ccv::detach(x)));
    g.backward(loss);
    for (double gv : x.grad()) CHECK(gv == doctest::Approx(0.25).epsilon(1e-15));
  }
}

TEST_CASE("backward fan-out accumulates") {
  Tensor<double> x = Tensor<double>::scalar(3.0);
  x.set_requires_grad(true);
  Graph<double> g;
  auto loss = g.add(x, x);
  g.backward(loss);
  CHECK(x.grad()[0] == 2.0);

  // k = 3 uses of the same leaf yield exactly 3x the single-use gradient.
  Tensor<double> y = Tensor<double>::scalar(1.5);
  y.set_requires_grad(true);
  Graph<double> g2;
  auto loss2 = g2.add(g2.add(y, y), y);
  g2.backward(loss2);
  CHECK(y.grad()[0] == 3.0);
}

TEST_CASE("backward on composed conv graph matches finite differences") {
  SplitMix64 rng(11);
  auto x = random_tensor({2, 4, 4}, rng);
  auto k = random_tensor({2, 2, 3, 3}, rng, -0.5, 0.5);
  auto b = random_tensor({2}, rng, -0.1, 0.1);
  auto rep = gradcheck(
      [](Graph<double>& g, std::vector<Tensor<double>>& ls) {
        return g.mean_reduce(g.sigmoid(g.conv2d(ls[0], ls[1], ls[2], 1)));
      },
      {x, k, b});
  INFO(rep.detail);
  CHECK(rep.ok);
  CHECK(rep.max_rel < 1e-6);
}

TEST_CASE("backward error cases") {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::from_data({2}, {1, 2});
  x.set_requires_grad(true);
  auto y = g.add(x, x);
  CHECK(thrown_message([&] { g.backward(y); }).find("scalar") != std::string::npos);

  Tensor<double> foreign = Tensor<double>::scalar(1.0);
  CHECK(thrown_message([&] { g.backward(foreign); }).find("not produced") !=
        std::string::npos);
}

TEST_CASE("leaves behind a detach boundary receive zero") {
  Tensor<double> x = Tensor<double>::from_data({3}, {1.0, -2.0, 0.5});
  x.set_requires_grad(true);
  Graph<double> g;
  auto d = ccv::detach(x);
  auto loss = g.mean_reduce(g.sigmoid(d));
  g.backward(loss);
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("adam: zero gradient on fresh state leaves parameters unchanged") {
  Tensor<float> w = Tensor<float>::from_data({3}, {1.0f, -2.0f, 0.5f});
  auto before = w.data();
  ccv::AdamState<float> st;
  ccv::adam_step<float>({&w}, st, 0.1f, 0.9f, 0.999f, 1e-8f);
  CHECK(w.data() == before);
  CHECK(st.step == 1);
}

TEST_CASE("adam: first step moves by ~lr in the gradient sign direction") {
  Tensor<double> w = Tensor<double>::from_data({2}, {1.0, -1.0});
  w.ensure_grad();
  w.grad()[0] = 0.37;
  w.grad()[1] = -42.0;
  ccv::AdamState<double> st;
  const double lr = 0.01;
  ccv::adam_step<double>({&w}, st, lr, 0.9, 0.999, 1e-8);
  CHECK(w.data()[0] == doctest::Approx(1.0 - lr).epsilon(1e-6));
  CHECK(w.data()[1] == doctest::Approx(-1.0 + lr).epsilon(1e-6));
}

TEST_CASE("adam: two steps on f(w)=w^2 match the hand-computed trace") {
  // Reference trace computed independently from the update formula.
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double w_ref = 1.0, m = 0.0, v = 0.0;
  std::vector<double> trace;
  for (int t = 1; t <= 2; ++t) {
    const double g = 2.0 * w_ref;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w_ref -= lr * mh / (std::sqrt(vh) + eps);
    trace.push_back(w_ref);
  }
  // First step: bias-corrected update is lr * g/(|g|+eps') ~= lr.
  CHECK(trace[0] == doctest::Approx(0.9000000005).epsilon(1e-10));
  CHECK(trace[1] == doctest::Approx(0.800411).epsilon(1e-5));

  Tensor<double> w = Tensor<double>::scalar(1.0);
  w.set_requires_grad(true);
  ccv::AdamState<double> st;
  for (int t = 1; t <= 2; ++t) {
    w.zero_grad();
    Graph<double> g;
    auto loss = g.mul(w, w);
    g.backward(loss);
    ccv::adam_step<double>({&w}, st, lr, b1, b2, eps);
    CHECK(w.data()[0] == doctest::Approx(trace[t - 1]).epsilon(1e-14));
  }
}

TEST_CASE("adam: shape mismatch against state errors") {
  Tensor<float> a = Tensor<float>::zeros({3});
  Tensor<float> b = Tensor<float>::zeros({4});
  ccv::AdamState<float> st;
  ccv::adam_step<float>({&a}, st, 0.1f, 0.9f, 0.999f, 1e-8f);
  CHECK_THROWS_AS(ccv::adam_step<float>({&b}, st, 0.1f, 0.9f, 0.999f, 1e-8f),
                  std::invalid_argument);
}

TEST_CASE("gradcheck: every differentiable primitive") {
  SplitMix64 rng(23);
  using Leaves = std::vector<Tensor<double>>;
  struct Case {
    const char* name;
    std::function<Tensor<double>(Graph<double>&, Leaves&)> fn;
    Leaves leaves;
  };
  auto img = [&](double lo, double hi) { return random_tensor({2, 4, 4}, rng, lo, hi); };
  std::vector<Case> cases;
  cases.push_back({"add",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.add(l[0], l[1])); },
                   {img(-1, 1), img(-1, 1)}});
  cases.push_back({"add scalar-broadcast",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.add(l[0], l[1])); },
                   {Tensor<double>::scalar(0.7), img(-1, 1)}});
  cases.push_back({"sub",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.sub(l[0], l[1])); },
                   {img(-1, 1), img(-1, 1)}});
  cases.push_back({"sub scalar-broadcast",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.sub(l[0], l[1])); },
                   {img(-1, 1), Tensor<double>::scalar(0.3)}});
  cases.push_back({"mul",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.mul(l[0], l[1])); },
                   {img(-1, 1), img(-1, 1)}});
  cases.push_back({"mul scalar-broadcast",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.mul(l[1], l[0])); },
                   {Tensor<double>::scalar(-1.2), img(-1, 1)}});
  cases.push_back({"div",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.div(l[0], l[1])); },
                   {img(-1, 1), img(0.5, 2.0)}});
  cases.push_back({"div scalar-denominator",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.div(l[0], l[1])); },
                   {img(-1, 1), Tensor<double>::scalar(1.7)}});
  cases.push_back({"add_scalar",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.add_scalar(l[0], 0.45));
                   },
                   {img(-1, 1)}});
  cases.push_back({"mul_scalar",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.mul_scalar(l[0], -2.5));
                   },
                   {img(-1, 1)}});
  cases.push_back({"rsub_scalar",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.rsub_scalar(l[0], 1.0));
                   },
                   {img(-1, 1)}});
  cases.push_back({"relu",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.relu(l[0])); },
                   {img(0.1, 1.0)}});
  cases.push_back({"relu negative side",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.relu(l[0])); },
                   {img(-1.0, -0.1)}});
  cases.push_back({"sigmoid",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(g.sigmoid(l[0])); },
                   {img(-2, 2)}});
  cases.push_back({"conv2d pad1",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.conv2d(l[0], l[1], l[2], 1));
                   },
                   {img(-1, 1), random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5),
                    random_tensor({3}, rng, -0.1, 0.1)}});
  cases.push_back({"conv2d pad0 1x1",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.conv2d(l[0], l[1], l[2], 0));
                   },
                   {img(-1, 1), random_tensor({2, 2, 1, 1}, rng, -0.5, 0.5),
                    random_tensor({2}, rng, -0.1, 0.1)}});
  cases.push_back({"concat_channels",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.mul(g.concat_channels(l[0], l[1]),
                                                g.concat_channels(l[1], l[0])));
                   },
                   {img(-1, 1), img(-1, 1)}});
  cases.push_back({"avgpool2",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.mul(g.avgpool2(l[0]), g.avgpool2(l[0])));
                   },
                   {img(-1, 1)}});
  cases.push_back({"upsample2",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.mul(g.upsample2(l[0]), g.upsample2(l[0])));
                   },
                   {img(-1, 1)}});
  cases.push_back({"mean_stack",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.mul(g.mean_stack({l[0], l[1], l[2]}), l[0]));
                   },
                   {img(-1, 1), img(-1, 1), img(-1, 1)}});
  cases.push_back({"sum_reduce",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mul_scalar(g.sum_reduce(g.mul(l[0], l[0])), 0.125);
                   },
                   {img(-1, 1)}});
  cases.push_back({"binary_entropy",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.binary_entropy(l[0]));
                   },
                   {img(0.1, 0.9)}});
  cases.push_back({"bce_with_logits",
                   [](Graph<double>& g, Leaves& l) {
                     return g.mean_reduce(g.bce_with_logits(l[0], l[1]));
                   },
                   {img(-2, 2), img(0.1, 0.9)}});
  cases.push_back({"mean_reduce",
                   [](Graph<double>& g, Leaves& l) { return g.mean_reduce(l[0]); },
                   {img(-1, 1)}});

  for (auto& c : cases) {
    INFO(c.name);
    auto rep = gradcheck(c.fn, c.leaves);
    INFO(rep.detail);
    CHECK(rep.ok);
    CHECK(rep.max_rel < 1e-6);
  }
}

namespace {

// Randomly composed graphs over a pool of same-shape tensors; depth <= 6,
// tensors of 32 elements. Returns false if the draw hit a relu kink too
// close to zero for finite differences (caller reseeds).
bool random_graph_case(uint64_t seed, ccvtest::GradcheckReport* rep) {
  SplitMix64 rng(seed);
  const int n_leaves = 2 + static_cast<int>(rng.next_below(2));
  std::vector<Tensor<double>> leaves;
  for (int i = 0; i < n_leaves; ++i) leaves.push_back(random_tensor({2, 4, 4}, rng));

  // Op sequence is encoded as draws so it can be replayed inside gradcheck's
  // repeated forward evaluations.
  std::vector<std::pair<int, std::pair<int, int>>> program;
  const int depth = 3 + static_cast<int>(rng.next_below(4));
  int pool_size = n_leaves;
  for (int d = 0; d < depth; ++d) {
    int op = static_cast<int>(rng.next_below(7));
    int a = static_cast<int>(rng.next_below(pool_size));
    int b = static_cast<int>(rng.next_below(pool_size));
    program.push_back({op, {a, b}});
    ++pool_size;
  }

  bool kink = false;
  auto run = [&](Graph<double>& g, std::vector<Tensor<double>>& ls) {
    std::vector<Tensor<double>> pool = ls;
    for (auto& ins : program) {
      auto [a, b] = ins.second;
      Tensor<double> r;
      switch (ins.first) {
        case 0: r = g.add(pool[a], pool[b]); break;
        case 1: r = g.sub(pool[a], pool[b]); break;
        case 2: r = g.mul(pool[a], pool[b]); break;
        case 3:
          for (double v : pool[a].data())
            if (std::abs(v) < 1e-3) kink = true;
          r = g.relu(pool[a]);
          break;
        case 4: r = g.sigmoid(pool[a]); break;
        case 5: r = g.mul_scalar(pool[a], 0.75); break;
        default: r = g.mean_stack({pool[a], pool[b]}); break;
      }
      pool.push_back(r);
    }
    return g.mean_reduce(pool.back());
  };

  *rep = gradcheck(run, leaves);
  return !kink;
}

}  // namespace

TEST_CASE("gradcheck: randomly composed graphs") {
  int done = 0;
  uint64_t seed = 1000;
  while (done < 20) {
    ccvtest::GradcheckReport rep;
    if (!random_graph_case(seed++, &rep)) continue;  // relu kink, reseed
    INFO("seed " << seed - 1 << " " << rep.detail);
    CHECK(rep.ok);
    CHECK(rep.max_rel < 1e-6);
    ++done;
  }
}

TEST_CASE("determinism: identical inputs give bit-identical outputs and gradients") {
  auto run = [](std::vector<float>* out, std::vector<float>* grad) {
    SplitMix64 rng(99);
    Tensor<float> x({2, 8, 8});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor<float> k({4, 2, 3, 3});
    for (auto& v : k.data()) v = static_cast<float>(rng.uniform(-0.4, 0.4));
    Tensor<float> b = Tensor<float>::zeros({4});
    x.set_requires_grad(true);
    Graph<float> g;
    auto y = g.mean_reduce(g.sigmoid(g.conv2d(x, k, b, 1)));
    g.backward(y);
    *out = y.data();
    *grad = x.grad();
  };
  std::vector<float> o1, g1, o2, g2;
  run(&o1, &g1);
  run(&o2, &g2);
  CHECK(o1 == o2);
  CHECK(g1 == g2);
}

TEST_CASE("detach zeroes exactly the gradient routed through that edge") {
  // L = sum(x * detach(x)): treating the second factor as a constant makes
  // dL/dx equal the values of x themselves.
  Tensor<double> x = Tensor<double>::from_data({3}, {0.5, -1.5, 2.0});
  x.set_requires_grad(true);
  Graph<double> g;
  auto loss = g.sum_reduce(g.mul(x, ccv::detach(x)));
  g.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == x.data()[i]);
}
