#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "nasaudit/error.hpp"
#include "nasaudit/rng.hpp"
#include "nasaudit/search_space.hpp"

using namespace nasaudit;

namespace {

Tensor random_alpha(Rng& rng, double scale = 1.0) {
  Tensor a({kEdgesPerCell, kOpCount});
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = scale * rng.normal();
  return a;
}

// Independent re-statement of the discretization rule, scoring every
// (edge, op) pair by brute force.
CellGenotype oracle_discretize(const Tensor& alpha, const OpMask& active) {
  CellGenotype out;
  for (std::size_t node = 0; node < kNodesPerCell; ++node) {
    struct Scored {
      std::size_t edge;
      std::size_t op;
      double weight;
    };
    std::vector<Scored> best_per_edge;
    for (std::size_t in = 0; in < node + 2; ++in) {
      const std::size_t e = edge_index(node, in);
      const std::vector<double> w = edge_softmax(alpha, e, active);
      Scored s{e, 0, -1.0};
      for (std::size_t op = 1; op < kOpCount; ++op) {  // never none
        if (!active[e][op]) continue;
        if (w[op] > s.weight) {
          s.weight = w[op];
          s.op = op;
        }
      }
      best_per_edge.push_back(s);
    }
    std::stable_sort(best_per_edge.begin(), best_per_edge.end(), [](const Scored& a, const Scored& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return a.edge < b.edge;  // tie: lower edge index wins
    });
    std::array<Scored, 2> keep{best_per_edge[0], best_per_edge[1]};
    std::sort(keep.begin(), keep.end(), [](const Scored& a, const Scored& b) { return a.edge < b.edge; });
    for (std::size_t slot = 0; slot < 2; ++slot) {
      out.nodes[node][slot].input_state = edge_ref(keep[slot].edge).input_state;
      out.nodes[node][slot].op = static_cast<OpKind>(keep[slot].op);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("edge indexing is input-major and invertible") {
  CHECK(edge_index(0, 0) == 0);
  CHECK(edge_index(0, 1) == 1);
  CHECK(edge_index(1, 0) == 2);
  CHECK(edge_index(3, 4) == 13);
  for (std::size_t e = 0; e < kEdgesPerCell; ++e) {
    const EdgeRef r = edge_ref(e);
    CHECK(edge_index(r.node, r.input_state) == e);
    CHECK(r.input_state < r.node + 2);
  }
}

TEST_CASE("mixed-op softmax weights sum to 1 on every edge") {
  Rng rng(21);
  Supernet net({4, 16, 12, 4}, 1);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor& a = net.param_store().value_of("alpha.normal");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = 10.0 * rng.normal();
    for (const CellKind kind : {CellKind::normal, CellKind::reduction}) {
      for (std::size_t e = 0; e < kEdgesPerCell; ++e) {
        const std::vector<double> w = net.edge_weights(kind, e);
        double s = 0.0;
        for (double v : w) s += v;
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("one-hot saturated alpha on skip reproduces the input branch") {
  SupernetConfig cfg{2, 32, 8, 3};
  Supernet net(cfg, 7);
  // +50 logit on skip_connect vs 0 elsewhere saturates the softmax.
  for (const char* name : {"alpha.normal", "alpha.reduction"}) {
    Tensor& a = net.param_store().value_of(name);
    for (std::size_t e = 0; e < kEdgesPerCell; ++e)
      for (std::size_t o = 0; o < kOpCount; ++o)
        a.data()[e * kOpCount + o] = o == static_cast<std::size_t>(OpKind::skip_connect) ? 50.0 : 0.0;
  }
  for (const CellKind kind : {CellKind::normal, CellKind::reduction}) {
    const std::vector<double> w = net.edge_weights(kind, 0);
    CHECK(std::abs(w[static_cast<std::size_t>(OpKind::skip_connect)] - 1.0) <= 1e-9);
  }
  // The supernet forward must match the all-skip genotype network when the
  // mixed op is saturated onto skip and both share parameters; instead of
  // aligning two parameter stores, check the defining property directly:
  // every mixed op passes its input through, so with a zeroed head the logits
  // collapse to the zero vector regardless of input.
  Tensor& headw = net.param_store().value_of("head.W");
  for (std::size_t i = 0; i < headw.size(); ++i) headw.data()[i] = 0.0;
  Rng rng(3);
  Tensor x({5, 8});
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const Tensor logits = model_logits(net, x);
  for (std::size_t i = 0; i < logits.size(); ++i) CHECK(std::abs(logits.values()[i]) <= 1e-9);
}

TEST_CASE("uniform alpha averages the branches") {
  SupernetConfig cfg{2, 32, 8, 3};
  Supernet net(cfg, 7);
  for (const char* name : {"alpha.normal", "alpha.reduction"}) {
    Tensor& a = net.param_store().value_of(name);
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = 0.25;  // equal logits
  }
  for (const CellKind kind : {CellKind::normal, CellKind::reduction}) {
    const std::vector<double> w = net.edge_weights(kind, 0);
    for (double v : w) CHECK(v == doctest::Approx(1.0 / kOpCount).epsilon(1e-12));
  }
}

TEST_CASE("discretize matches the brute-force oracle on 1000 draws") {
  const auto t0 = std::chrono::steady_clock::now();
  const OpMask all = full_op_mask();
  Rng rng(1234);
  for (int i = 0; i < 1000; ++i) {
    // Mix of scales: tiny alphas produce near-ties, large ones are decisive.
    const double scale = i % 3 == 0 ? 1e-8 : (i % 3 == 1 ? 1.0 : 20.0);
    const Tensor an = random_alpha(rng, scale);
    const Tensor ar = random_alpha(rng, scale);
    const Genotype got = discretize(an, ar);
    CHECK(got.normal == oracle_discretize(an, all));
    CHECK(got.reduction == oracle_discretize(ar, all));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 30.0);
}

TEST_CASE("discretize tie-breaks deterministically on all-equal alpha") {
  const Tensor zero({kEdgesPerCell, kOpCount});
  const Genotype a = discretize(zero, zero);
  const Genotype b = discretize(zero, zero);
  CHECK(a == b);
  validate_genotype(a);
  // Lowest edge and op indices win: per node the first two inputs, op index 1.
  for (std::size_t node = 0; node < kNodesPerCell; ++node)
    for (std::size_t slot = 0; slot < 2; ++slot) {
      CHECK(a.normal.nodes[node][slot].input_state == slot);
      CHECK(a.normal.nodes[node][slot].op == OpKind::skip_connect);
    }
}

TEST_CASE("none never wins discretization even at weight 0.99") {
  Tensor an({kEdgesPerCell, kOpCount});
  for (std::size_t e = 0; e < kEdgesPerCell; ++e) {
    an.data()[e * kOpCount + 0] = 50.0;  // none dominates the softmax
    an.data()[e * kOpCount + static_cast<std::size_t>(OpKind::linear_tanh)] = 1.0;
  }
  const Genotype g = discretize(an, an);
  for (const CellGenotype* cell : {&g.normal, &g.reduction})
    for (const auto& node : cell->nodes)
      for (const auto& edge : node) CHECK(edge.op == OpKind::linear_tanh);
}

TEST_CASE("hand-built alpha places the intended op") {
  Tensor an({kEdgesPerCell, kOpCount});
  // Edge (c_{k-1} -> node 0) is edge 1; push linear_relu to weight ~0.9.
  an.data()[1 * kOpCount + static_cast<std::size_t>(OpKind::linear_relu)] = 6.0;
  const Genotype g = discretize(an, Tensor({kEdgesPerCell, kOpCount}));
  bool found = false;
  for (const auto& e : g.normal.nodes[0])
    if (e.input_state == 1 && e.op == OpKind::linear_relu) found = true;
  CHECK(found);
}

TEST_CASE("random genotypes are valid, seeded, and op-uniform") {
  Rng rng(99);
  Genotype g = random_genotype(rng);
  validate_genotype(g);

  Rng r1(5), r2(5);
  CHECK(random_genotype(r1) == random_genotype(r2));

  // Op frequency over 1e5 samples: each of the 7 non-none ops should land
  // within 3 sigma of the multinomial expectation n/7.
  const std::size_t n_samples = 100000;
  const std::size_t slots = n_samples * 16;  // 16 (input, op) pairs per genotype
  std::map<OpKind, std::size_t> hist;
  Rng r(424242);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Genotype s = random_genotype(r);
    for (const CellGenotype* cell : {&s.normal, &s.reduction})
      for (const auto& node : cell->nodes)
        for (const auto& e : node) hist[e.op]++;
  }
  CHECK(hist.count(OpKind::none) == 0);
  const double expect = static_cast<double>(slots) / 7.0;
  const double sigma = std::sqrt(static_cast<double>(slots) * (1.0 / 7.0) * (6.0 / 7.0));
  CHECK(hist.size() == 7);
  for (const auto& [op, count] : hist)
    CHECK(std::abs(static_cast<double>(count) - expect) <= 3.0 * sigma);
}

TEST_CASE("space size closed form matches enumeration") {
  // Per-node input-pair counts C(i+2,2) with 7 op choices per edge.
  unsigned long long per_cell = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    const unsigned long long fan = i + 2;
    per_cell *= fan * (fan - 1) / 2 * 7ULL * 7ULL;
  }
  unsigned long long p78 = 1;
  for (int i = 0; i < 8; ++i) p78 *= 7;
  CHECK(per_cell == 180ULL * p78);
  CHECK(cell_space_size() == per_cell);
  CHECK(space_size() == per_cell * per_cell);
  CHECK(static_cast<double>(space_size()) == doctest::Approx(1.0767e18).epsilon(1e-3));

  // 2-node variant: exhaustive enumeration.
  // node0: C(2,2)=1 pair, node1: C(3,2)=3 pairs, 7^2 per node.
  CHECK(cell_space_size(2) == 1ULL * 49 * 3 * 49);
  std::size_t count = 0;
  for (std::size_t n1a = 0; n1a < 3; ++n1a)
    for (std::size_t n1b = n1a + 1; n1b < 3; ++n1b) count++;
  CHECK(cell_space_size(2) == 49ULL * 49 * count);
}

TEST_CASE("reduction positions") {
  CHECK(reduction_positions(6) == std::vector<std::size_t>{2, 4});
  CHECK(reduction_positions(4) == std::vector<std::size_t>{1, 2});
  CHECK(reduction_positions(2) == std::vector<std::size_t>{0, 1});
  CHECK(reduction_positions(3) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("instantiate: forward shape, finiteness, zero-head uniformity") {
  Rng rng(31);
  for (std::uint64_t s = 0; s < 20; ++s) {
    Genotype g = random_genotype(rng);
    NetworkInstance net = instantiate(g, 2 + s % 5, 16, 5, 9, s);
    Tensor x({3, 9});
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = -3.0 + 6.0 * rng.uniform();
    const Tensor logits = model_logits(net, x);
    REQUIRE(logits.rank() == 2);
    CHECK(logits.shape()[0] == 3);
    CHECK(logits.shape()[1] == 5);
    for (std::size_t i = 0; i < logits.size(); ++i) CHECK(std::isfinite(logits.values()[i]));
  }

  // All-skip genotype with a zeroed head: logits identically zero -> uniform softmax.
  Genotype skip;
  for (CellGenotype* cell : {&skip.normal, &skip.reduction})
    for (std::size_t node = 0; node < kNodesPerCell; ++node)
      for (std::size_t slot = 0; slot < 2; ++slot)
        cell->nodes[node][slot] = {slot, OpKind::skip_connect};
  NetworkInstance net = instantiate(skip, 4, 16, 4, 8, 11);
  Tensor& hw = net.param_store().value_of("head.W");
  for (std::size_t i = 0; i < hw.size(); ++i) hw.data()[i] = 0.0;
  Tensor x({2, 8});
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const Tensor logits = model_logits(net, x);
  for (std::size_t i = 0; i < logits.size(); ++i) CHECK(logits.values()[i] == 0.0);
}

TEST_CASE("instantiate rejects widths the pool groups cannot divide") {
  Rng rng(1);
  Genotype g = random_genotype(rng);
  CHECK_THROWS_AS(instantiate(g, 4, 6, 3, 8, 0), ConfigError);
  // Width must stay divisible after the reduction-cell halvings too.
  CHECK_THROWS_AS(instantiate(g, 6, 8, 3, 8, 0), ConfigError);
}

TEST_CASE("parameter count of a fixed genotype matches the hand formula") {
  Genotype g;  // both cells: two linear_relu edges per node from states 0,1
  for (CellGenotype* cell : {&g.normal, &g.reduction})
    for (std::size_t node = 0; node < kNodesPerCell; ++node)
      for (std::size_t slot = 0; slot < 2; ++slot)
        cell->nodes[node][slot] = {slot, OpKind::linear_relu};
  const std::size_t w = 16, d = 9, C = 5, L = 2;
  NetworkInstance net = instantiate(g, L, w, C, d, 0);
  // stem d*w+w; per cell 8 linear_relu ops (w*w+w each); one projection
  // (4w*w+w) between the 2 cells; head w*C+C. Reductions at 0 and 1 halve
  // the width twice: cell 0 runs at w/2, cell 1 at w/4.
  auto cell_params = [](std::size_t cw) { return 8 * (cw * cw + cw); };
  const std::size_t w0 = w / 2, w1 = w / 4;
  const std::size_t expect = (d * w + w) + cell_params(w0) + (4 * w0 * w0 + w0) +
                             cell_params(w1) + (w1 * C + C);
  CHECK(net.param_store().scalar_count() == expect);
}

TEST_CASE("genotype render/parse round trip and dot output") {
  Rng rng(77);
  for (int i = 0; i < 50; ++i) {
    const Genotype g = random_genotype(rng);
    const std::string text = render_genotype(g);
    CHECK(parse_genotype(text) == g);
  }
  const Genotype g = random_genotype(rng);
  const std::string dot = genotype_dot(g, "t");
  CHECK(dot.find("digraph") != std::string::npos);
  CHECK(dot.find("c_k-1") != std::string::npos);
  CHECK_THROWS_AS(parse_genotype("not a genotype"), FormatError);
}

TEST_CASE("supernet op masking guards the last op") {
  Supernet net({4, 16, 8, 3}, 0);
  CHECK(net.active_count(CellKind::normal, 0) == kOpCount);
  net.drop_op(CellKind::normal, 0, OpKind::linear_relu);
  CHECK(net.active_count(CellKind::normal, 0) == kOpCount - 1);
  CHECK_FALSE(net.op_active(CellKind::normal, 0, OpKind::linear_relu));
  // Weight of a dropped op is exactly zero and the rest renormalize.
  const std::vector<double> w = net.edge_weights(CellKind::normal, 0);
  CHECK(w[static_cast<std::size_t>(OpKind::linear_relu)] == 0.0);
  double s = 0.0;
  for (double v : w) s += v;
  CHECK(std::abs(s - 1.0) <= 1e-9);

  for (std::size_t o = 0; o < kOpCount; ++o)
    if (net.op_active(CellKind::normal, 0, static_cast<OpKind>(o)) &&
        static_cast<OpKind>(o) != OpKind::gated_linear)
      net.drop_op(CellKind::normal, 0, static_cast<OpKind>(o));
  CHECK(net.active_count(CellKind::normal, 0) == 1);
  CHECK_THROWS_AS(net.drop_op(CellKind::normal, 0, OpKind::gated_linear), ContractError);
}
