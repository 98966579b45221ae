#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "nasaudit/autodiff.hpp"
#include "nasaudit/checkpoint.hpp"
#include "nasaudit/error.hpp"
#include "nasaudit/optim.hpp"
#include "nasaudit/rng.hpp"

using namespace nasaudit;

namespace {

Tensor rand_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -3.0, double hi = 3.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

double max_rel_err(const Gradients& got, const Gradients& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.by_index.size(); ++i) {
    const Tensor& a = got.by_index[i];
    const Tensor& b = want.by_index[i];
    REQUIRE(a.size() == b.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double denom = std::max({std::abs(a.values()[j]), std::abs(b.values()[j]), 1.0});
      worst = std::max(worst, std::abs(a.values()[j] - b.values()[j]) / denom);
    }
  }
  return worst;
}

// Builds a random graph over the primitive set from `leaf_count` parameter
// matrices, mixing matmul/add/activations/pooling/concat, ending in a scalar.
Var random_graph(Tape& tape, const BoundParams& bound, const ParamStore& store, Rng& rng) {
  std::vector<Var> pool;
  Var x = tape.leaf(rand_tensor({4, 8}, rng));
  pool.push_back(x);
  for (std::size_t i = 0; i < store.count(); ++i) {
    const Tensor& p = store.value(i);
    Var cur = pool.back();
    Var v = bound.vars[i];
    if (p.rank() == 2) {
      cur = tape.matmul(cur, v);
    } else {
      cur = tape.add(cur, v);  // row broadcast
    }
    switch (rng.bounded(6)) {
      case 0: cur = tape.relu(cur); break;
      case 1: cur = tape.tanh_act(cur); break;
      case 2: cur = tape.sigmoid(cur); break;
      case 3: cur = tape.scale(cur, 0.5 + rng.uniform()); break;
      case 4: cur = tape.group_avg(cur, 2, true); break;
      case 5: cur = tape.group_max(cur, 2, true); break;
    }
    if (rng.bounded(3) == 0 && tape.value(pool.back()).shape() == tape.value(cur).shape())
      cur = tape.mul(cur, pool.back());
    pool.push_back(cur);
  }
  if (tape.value(pool.back()).rank() == 2 && tape.value(pool[pool.size() - 2]).rank() == 2 &&
      tape.value(pool.back()).shape()[0] == tape.value(pool[pool.size() - 2]).shape()[0]) {
    const Var parts[2] = {pool[pool.size() - 2], pool.back()};
    pool.push_back(tape.concat(parts));
  }
  Var sm = tape.softmax(pool.back());
  return rng.bounded(2) == 0 ? tape.mean(sm) : tape.scale(tape.sum(tape.log_softmax(pool.back())),
                                                          1.0 / tape.value(pool.back()).size());
}

}  // namespace

TEST_CASE("primitive forward values") {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {-1.0, 0.0, 2.0}));
  CHECK(tape.value(tape.relu(x)).values()[0] == 0.0);
  CHECK(tape.value(tape.relu(x)).values()[1] == 0.0);
  CHECK(tape.value(tape.relu(x)).values()[2] == 2.0);

  Var two = tape.leaf(Tensor({2}, {0.0, 0.0}));
  const Tensor& sm = tape.value(tape.softmax(two));
  CHECK(sm.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sm.values()[1] == doctest::Approx(0.5).epsilon(1e-12));

  // Cross-entropy of a uniform 2-class prediction is ln 2 for either label.
  Var logits = tape.leaf(Tensor({1, 2}, {0.7, 0.7}));
  for (int label : {0, 1}) {
    Var ce = cross_entropy_loss(tape, logits, {label});
    CHECK(tape.value(ce).values()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows sum to one and lie in (0,1)") {
  Rng rng(11);
  Tape tape;
  Var x = tape.leaf(rand_tensor({5, 7}, rng, -30.0, 30.0));
  const Tensor& sm = tape.value(tape.softmax(x));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      const double v = sm.values()[r * 7 + c];
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("analytic gradients") {
  // d(x^2)/dx at x=3 is 6 (x^2 built as x*x).
  {
    Tape tape;
    Var x = tape.leaf(Tensor({1}, {3.0}));
    tape.backward(tape.sum(tape.mul(x, x)));
    CHECK(tape.grad(x).values()[0] == doctest::Approx(6.0).epsilon(1e-12));
  }
  // Softmax-cross-entropy at uniform logits, true class 0 of 2: p - onehot = [-0.5, 0.5].
  {
    Tape tape;
    Var logits = tape.leaf(Tensor({1, 2}, {0.0, 0.0}));
    tape.backward(cross_entropy_loss(tape, logits, {0}));
    CHECK(tape.grad(logits).values()[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(tape.grad(logits).values()[1] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("finite_diff_grad basics") {
  ParamStore store;
  store.add("x", Tensor({1}, {3.0}));
  auto square = [](const ParamStore& s) {
    const double v = s.value(0).values()[0];
    return v * v;
  };
  Gradients g = finite_diff_grad(square, store, 1e-3);
  CHECK(g.by_index[0].values()[0] == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(store.value(0).values()[0] == 3.0);  // restored exactly

  Gradients gc = finite_diff_grad([](const ParamStore&) { return 4.2; }, store, 1e-3);
  CHECK(std::abs(gc.by_index[0].values()[0]) <= 1e-9);
}

TEST_CASE("backward matches finite differences on a 2-layer net") {
  Rng rng(5);
  ParamStore store;
  store.add("W1", rand_tensor({6, 5}, rng, -1.0, 1.0));
  store.add("b1", rand_tensor({5}, rng, -0.5, 0.5));
  store.add("W2", rand_tensor({5, 3}, rng, -1.0, 1.0));
  store.add("b2", rand_tensor({3}, rng, -0.5, 0.5));
  const Tensor x = rand_tensor({4, 6}, rng);
  const std::vector<int> labels = {0, 2, 1, 2};

  auto loss_fn = [&](const ParamStore& s) {
    Tape tape;
    BoundParams bound = bind(tape, s);
    Var h = tape.relu(tape.add(tape.matmul(tape.leaf(x), bound.vars[0]), bound.vars[1]));
    Var logits = tape.add(tape.matmul(h, bound.vars[2]), bound.vars[3]);
    return tape.value(cross_entropy_loss(tape, logits, labels)).values()[0];
  };

  Tape tape;
  BoundParams bound = bind(tape, store);
  Var h = tape.relu(tape.add(tape.matmul(tape.leaf(x), bound.vars[0]), bound.vars[1]));
  Var logits = tape.add(tape.matmul(h, bound.vars[2]), bound.vars[3]);
  tape.backward(cross_entropy_loss(tape, logits, labels));
  Gradients back = collect_gradients(tape, bound, store);
  Gradients fd = finite_diff_grad(loss_fn, store, 1e-3);
  CHECK(max_rel_err(back, fd) < 1e-4);
}

namespace {

// Central differences are only valid away from relu/max kinks: a parameter
// nudge that flips an argmax or a relu sign compares two different linear
// pieces. Accept a graph only when every kink has clear margin.
bool kink_free(const Tape& tape, double margin) {
  for (Var v : tape.nodes_with_op(Op::relu)) {
    const Tensor& in = tape.value(tape.parent_of(v));
    for (std::size_t i = 0; i < in.size(); ++i)
      if (std::abs(in.values()[i]) < margin) return false;
  }
  for (Var v : tape.nodes_with_op(Op::group_max)) {
    const Tensor& in = tape.value(tape.parent_of(v));
    const std::size_t cols = in.shape()[in.rank() - 1];
    const std::size_t rows = in.size() / cols;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t g0 = 0; g0 + 1 < cols; g0 += 2) {
        double best = -1e300, second = -1e300;
        for (std::size_t j = g0; j < std::min(g0 + 2, cols); ++j) {
          const double x = in.values()[r * cols + j];
          if (x > best) {
            second = best;
            best = x;
          } else if (x > second) {
            second = x;
          }
        }
        if (best - second < margin) return false;
      }
  }
  return true;
}

}  // namespace

TEST_CASE("gradient correctness on 50 random composed graphs") {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(900 + trial);
    ParamStore store;
    const std::size_t layers = 2 + rng.bounded(2);
    for (std::size_t l = 0; l < layers; ++l) {
      store.add("W" + std::to_string(l), rand_tensor({8, 8}, rng, -0.7, 0.7));
      store.add("b" + std::to_string(l), rand_tensor({8}, rng, -0.5, 0.5));
    }
    // Redraw the graph until every relu/group_max sits clear of its switch
    // point; finite differences are meaningless across a kink.
    std::uint64_t offset = 0;
    for (; offset < 64; ++offset) {
      Tape probe;
      BoundParams bound = bind(probe, store);
      Rng r(7000 + trial * 97 + offset);
      random_graph(probe, bound, store, r);
      if (kink_free(probe, 0.05)) break;
    }
    REQUIRE(offset < 64);
    const std::uint64_t graph_seed = 7000 + trial * 97 + offset;
    auto loss_fn = [&](const ParamStore& s) {
      Tape tape;
      BoundParams bound = bind(tape, s);
      Rng r(graph_seed);  // same graph for every evaluation
      return tape.value(random_graph(tape, bound, s, r)).values()[0];
    };
    Tape tape;
    BoundParams bound = bind(tape, store);
    Rng r(graph_seed);
    Var loss = random_graph(tape, bound, store, r);
    tape.backward(loss);
    Gradients back = collect_gradients(tape, bound, store);
    Gradients fd = finite_diff_grad(loss_fn, store, 1e-3);
    worst = std::max(worst, max_rel_err(back, fd));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(worst < 1e-4);
  CHECK(secs < 10.0);
}

TEST_CASE("shape and contract errors") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}));
  Var b = tape.leaf(Tensor({2, 3}));
  CHECK_THROWS_AS(tape.matmul(a, b), ShapeError);
  CHECK_THROWS_AS(tape.backward(a), ContractError);  // non-scalar loss
}

TEST_CASE("unreachable parameters get zero gradients") {
  ParamStore store;
  store.add("used", Tensor({1}, {2.0}));
  store.add("unused", Tensor({1}, {5.0}));
  Tape tape;
  BoundParams bound = bind(tape, store);
  tape.backward(tape.sum(tape.mul(bound.vars[0], bound.vars[0])));
  Gradients g = collect_gradients(tape, bound, store);
  CHECK(g.by_index[0].values()[0] == doctest::Approx(4.0));
  CHECK(g.by_index[1].values()[0] == 0.0);
}

TEST_CASE("adam step behavior") {
  ParamStore store;
  store.add("p", Tensor({1}, {1.0}));
  Adam adam(store, ParamGroup::weights, AdamConfig{0.1, 0.9, 0.999, 1e-8});

  Gradients g;
  g.by_index.push_back(Tensor({1}, {1.0}));
  adam.step(store, g);
  // Bias-corrected first step moves by ~lr regardless of gradient scale.
  CHECK(store.value(0).values()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-6));

  Gradients zero;
  zero.by_index.push_back(Tensor({1}, {0.0}));
  ParamStore store2;
  store2.add("p", Tensor({1}, {1.0}));
  Adam adam2(store2, ParamGroup::weights);
  adam2.step(store2, zero);
  CHECK(store2.value(0).values()[0] == 1.0);

  Gradients bad;
  bad.by_index.push_back(Tensor({1}, {std::nan("")}));
  CHECK_THROWS_AS(adam.step(store, bad), NanGradientError);
  CHECK(store.value(0).values()[0] == doctest::Approx(0.9).epsilon(1e-6));  // step aborted
}

TEST_CASE("adam determinism") {
  auto run = [] {
    Rng rng(3);
    ParamStore store;
    store.add("W", rand_tensor({4, 4}, rng));
    Adam adam(store, ParamGroup::weights);
    for (int i = 0; i < 20; ++i) {
      Tape tape;
      BoundParams bound = bind(tape, store);
      tape.backward(tape.sum(tape.mul(bound.vars[0], bound.vars[0])));
      adam.step(store, collect_gradients(tape, bound, store));
    }
    return store.flatten(ParamGroup::weights);
  };
  const std::vector<double> a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bit-identical
}

TEST_CASE("sgd step and momentum recurrence") {
  ParamStore store;
  store.add("p", Tensor({1}, {0.0}));
  Gradients g;
  g.by_index.push_back(Tensor({1}, {2.0}));

  {
    ParamStore s2;
    s2.add("p", Tensor({1}, {0.0}));
    Sgd plain(s2, ParamGroup::weights, 0.0);
    plain.step(s2, g, 0.1);
    CHECK(s2.value(0).values()[0] == doctest::Approx(-0.2).epsilon(1e-12));
  }

  Sgd sgd(store, ParamGroup::weights, 0.9);
  sgd.step(store, g, 0.1);
  const double after1 = store.value(0).values()[0];
  sgd.step(store, g, 0.1);
  const double delta2 = store.value(0).values()[0] - after1;
  CHECK(after1 == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(delta2 == doctest::Approx(-0.2 * 1.9).epsilon(1e-12));  // velocity accumulates

  Gradients zero;
  zero.by_index.push_back(Tensor({1}, {0.0}));
  ParamStore s3;
  s3.add("p", Tensor({1}, {1.5}));
  Sgd sgd3(s3, ParamGroup::weights, 0.0);
  sgd3.step(s3, zero, 0.1);
  CHECK(s3.value(0).values()[0] == 1.5);
}

TEST_CASE("gradient clipping rescales only above the ceiling") {
  ParamStore store;
  store.add("a", Tensor({2}, {0.0, 0.0}));
  Gradients g;
  g.by_index.push_back(Tensor({2}, {3.0, 4.0}));  // norm 5
  const double pre = clip_grad_norm(g, store, ParamGroup::weights, 10.0);
  CHECK(pre == doctest::Approx(5.0));
  CHECK(g.by_index[0].values()[0] == 3.0);  // under ceiling: untouched

  const double pre2 = clip_grad_norm(g, store, ParamGroup::weights, 1.0);
  CHECK(pre2 == doctest::Approx(5.0));
  CHECK(g.by_index[0].values()[0] == doctest::Approx(0.6));
  CHECK(g.by_index[0].values()[1] == doctest::Approx(0.8));
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0.1, 0.001, 0, 100) == doctest::Approx(0.1));
  CHECK(cosine_lr(0.1, 0.001, 100, 100) == doctest::Approx(0.001));
  CHECK(cosine_lr(0.1, 0.001, 50, 100) == doctest::Approx((0.1 + 0.001) / 2).epsilon(1e-9));
}

TEST_CASE("checkpoint round trip preserves names, shapes, bits") {
  Rng rng(17);
  ParamStore store;
  store.add("W", rand_tensor({3, 4}, rng));
  store.add("alpha", rand_tensor({2, 8}, rng), ParamGroup::arch);
  const auto path = std::filesystem::temp_directory_path() / "nasaudit_ckpt_test.bin";
  save_checkpoint(store, path);
  ParamStore loaded = load_checkpoint(path);
  REQUIRE(loaded.count() == store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    CHECK(loaded.name(i) == store.name(i));
    REQUIRE(loaded.value(i).size() == store.value(i).size());
    for (std::size_t j = 0; j < store.value(i).size(); ++j)
      CHECK(loaded.value(i).values()[j] == store.value(i).values()[j]);
  }

  // The file format carries no group tags; loading into an existing store
  // keeps its grouping and just restores values.
  ParamStore into;
  into.add("W", Tensor({3, 4}));
  into.add("alpha", Tensor({2, 8}), ParamGroup::arch);
  load_checkpoint_into(into, path);
  CHECK(into.group(1) == ParamGroup::arch);
  for (std::size_t j = 0; j < into.value(1).size(); ++j)
    CHECK(into.value(1).values()[j] == store.value(1).values()[j]);
  std::filesystem::remove(path);
}
