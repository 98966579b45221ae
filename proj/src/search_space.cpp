#include "nasaudit/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nasaudit/error.hpp"

namespace nasaudit {

namespace {

constexpr const char* kOpNames[kOpCount] = {
    "none",           "skip_connect",   "linear_relu", "linear_tanh",
    "low_rank_linear", "group_avg_pool", "group_max_pool", "gated_linear",
};

std::size_t low_rank(std::size_t width) { return std::max<std::size_t>(1, width / 4); }

}  // namespace

const char* op_kind_name(OpKind op) { return kOpNames[static_cast<std::size_t>(op)]; }

OpKind op_kind_from(const std::string& s) {
  for (std::size_t i = 0; i < kOpCount; ++i)
    if (s == kOpNames[i]) return static_cast<OpKind>(i);
  throw FormatError("unknown operation: " + s);
}

std::size_t edge_index(std::size_t node, std::size_t input_state) {
  if (node >= kNodesPerCell || input_state >= node + 2)
    throw ContractError("edge_index: node " + std::to_string(node) + ", input " +
                        std::to_string(input_state));
  std::size_t base = 0;
  for (std::size_t i = 0; i < node; ++i) base += i + 2;
  return base + input_state;
}

EdgeRef edge_ref(std::size_t edge) {
  std::size_t base = 0;
  for (std::size_t node = 0; node < kNodesPerCell; ++node) {
    const std::size_t fan = node + 2;
    if (edge < base + fan) return EdgeRef{node, edge - base};
    base += fan;
  }
  throw ContractError("edge_ref: edge " + std::to_string(edge) + " out of range");
}

std::string state_name(std::size_t input_state) {
  if (input_state == 0) return "c_k-2";
  if (input_state == 1) return "c_k-1";
  return "n" + std::to_string(input_state - 2);
}

std::size_t state_from(const std::string& name) {
  if (name == "c_k-2") return 0;
  if (name == "c_k-1") return 1;
  if (name.size() >= 2 && name[0] == 'n') {
    const int t = std::stoi(name.substr(1));
    if (t >= 0 && t + 2 < static_cast<int>(kNodesPerCell) + 2)
      return static_cast<std::size_t>(t) + 2;
  }
  throw FormatError("unknown input state: " + name);
}

void validate_genotype(const Genotype& g) {
  for (const CellGenotype* cell : {&g.normal, &g.reduction}) {
    for (std::size_t node = 0; node < kNodesPerCell; ++node) {
      const auto& pair = cell->nodes[node];
      if (pair[0].input_state >= pair[1].input_state)
        throw ContractError("genotype: node inputs must be distinct and ordered");
      if (pair[1].input_state >= node + 2)
        throw ContractError("genotype: input state beyond node " + std::to_string(node));
      for (const GenotypeEdge& e : pair)
        if (e.op == OpKind::none) throw ContractError("genotype: none op is not selectable");
    }
  }
}

std::string render_genotype(const Genotype& g) {
  std::ostringstream os;
  const char* kinds[2] = {"normal", "reduction"};
  const CellGenotype* cells[2] = {&g.normal, &g.reduction};
  for (int k = 0; k < 2; ++k) {
    os << kinds[k] << ':';
    for (std::size_t node = 0; node < kNodesPerCell; ++node) {
      os << ' ';
      for (const GenotypeEdge& e : cells[k]->nodes[node])
        os << '(' << state_name(e.input_state) << ", " << op_kind_name(e.op) << ')';
      if (node + 1 < kNodesPerCell) os << " |";
    }
    os << '\n';
  }
  return os.str();
}

namespace {

CellGenotype parse_cell_line(const std::string& line, const std::string& kind) {
  const std::string prefix = kind + ":";
  if (line.compare(0, prefix.size(), prefix) != 0)
    throw FormatError("genotype: expected line starting with '" + prefix + "'");
  std::string rest = line.substr(prefix.size());

  std::vector<std::string> node_parts;
  std::size_t pos = 0;
  while (true) {
    const std::size_t bar = rest.find('|', pos);
    if (bar == std::string::npos) {
      node_parts.push_back(rest.substr(pos));
      break;
    }
    node_parts.push_back(rest.substr(pos, bar - pos));
    pos = bar + 1;
  }
  if (node_parts.size() != kNodesPerCell)
    throw FormatError("genotype: expected " + std::to_string(kNodesPerCell) + " node groups, got " +
                      std::to_string(node_parts.size()));

  CellGenotype cell;
  for (std::size_t node = 0; node < kNodesPerCell; ++node) {
    const std::string& part = node_parts[node];
    std::vector<GenotypeEdge> edges;
    std::size_t p = 0;
    while ((p = part.find('(', p)) != std::string::npos) {
      const std::size_t close = part.find(')', p);
      if (close == std::string::npos) throw FormatError("genotype: unbalanced parenthesis");
      const std::string body = part.substr(p + 1, close - p - 1);
      const std::size_t comma = body.find(',');
      if (comma == std::string::npos) throw FormatError("genotype: bad pair '" + body + "'");
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      GenotypeEdge edge;
      edge.input_state = state_from(trim(body.substr(0, comma)));
      edge.op = op_kind_from(trim(body.substr(comma + 1)));
      edges.push_back(edge);
      p = close + 1;
    }
    if (edges.size() != 2)
      throw FormatError("genotype: node " + std::to_string(node) + " needs exactly 2 pairs");
    if (edges[0].input_state > edges[1].input_state) std::swap(edges[0], edges[1]);
    cell.nodes[node] = {edges[0], edges[1]};
  }
  return cell;
}

}  // namespace

Genotype parse_genotype(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  if (lines.size() != 2) throw FormatError("genotype: expected 2 cell lines");
  Genotype g;
  g.normal = parse_cell_line(lines[0], "normal");
  g.reduction = parse_cell_line(lines[1], "reduction");
  validate_genotype(g);
  return g;
}

std::string genotype_dot(const Genotype& g, const std::string& title) {
  std::ostringstream os;
  os << "digraph \"" << title << "\" {\n  rankdir=LR;\n  node [shape=box, style=rounded];\n";
  const char* kinds[2] = {"normal", "reduction"};
  const CellGenotype* cells[2] = {&g.normal, &g.reduction};
  for (int k = 0; k < 2; ++k) {
    os << "  subgraph cluster_" << kinds[k] << " {\n    label=\"" << kinds[k] << " cell\";\n";
    const std::string p = std::string(1, "nr"[k]);
    os << "    " << p << "_in0 [label=\"c_k-2\"];\n";
    os << "    " << p << "_in1 [label=\"c_k-1\"];\n";
    for (std::size_t node = 0; node < kNodesPerCell; ++node)
      os << "    " << p << "_n" << node << " [label=\"n" << node << "\"];\n";
    os << "    " << p << "_out [label=\"mean\", shape=ellipse];\n";
    for (std::size_t node = 0; node < kNodesPerCell; ++node) {
      for (const GenotypeEdge& e : cells[k]->nodes[node]) {
        std::string src = e.input_state < 2 ? p + "_in" + std::to_string(e.input_state)
                                            : p + "_n" + std::to_string(e.input_state - 2);
        os << "    " << src << " -> " << p << "_n" << node << " [label=\"" << op_kind_name(e.op)
           << "\"];\n";
      }
      os << "    " << p << "_n" << node << " -> " << p << "_out [style=dotted];\n";
    }
    os << "  }\n";
  }
  os << "}\n";
  return os.str();
}

Genotype random_genotype(Rng& rng) {
  Genotype g;
  for (CellGenotype* cell : {&g.normal, &g.reduction}) {
    for (std::size_t node = 0; node < kNodesPerCell; ++node) {
      const std::size_t fan = node + 2;
      const std::size_t first = rng.bounded(fan);
      std::size_t second = rng.bounded(fan - 1);
      if (second >= first) ++second;
      std::size_t lo = std::min(first, second), hi = std::max(first, second);
      auto pick_op = [&rng]() {
        return static_cast<OpKind>(1 + rng.bounded(kOpCount - 1));  // never none
      };
      cell->nodes[node] = {GenotypeEdge{lo, pick_op()}, GenotypeEdge{hi, pick_op()}};
    }
  }
  validate_genotype(g);
  return g;
}

unsigned long long cell_space_size(std::size_t nodes) {
  unsigned long long total = 1;
  for (std::size_t i = 0; i < nodes; ++i) {
    const unsigned long long fan = i + 2;
    const unsigned long long pairs = fan * (fan - 1) / 2;
    total *= pairs * 7ull * 7ull;
  }
  return total;
}

unsigned long long space_size() {
  const unsigned long long per_cell = cell_space_size(kNodesPerCell);
  return per_cell * per_cell;
}

OpMask full_op_mask() {
  OpMask m;
  for (auto& row : m) row.fill(true);
  return m;
}

std::vector<double> edge_softmax(const Tensor& alpha, std::size_t edge, const OpMask& active) {
  if (alpha.rank() != 2 || alpha.rows() != kEdgesPerCell || alpha.cols() != kOpCount)
    throw ShapeError("edge_softmax: alpha must be [" + std::to_string(kEdgesPerCell) + ", " +
                     std::to_string(kOpCount) + "], got " + alpha.shape_string());
  std::vector<double> w(kOpCount, 0.0);
  double mx = -1e300;
  for (std::size_t o = 0; o < kOpCount; ++o)
    if (active[edge][o]) mx = std::max(mx, alpha.at(edge, o));
  double z = 0.0;
  for (std::size_t o = 0; o < kOpCount; ++o)
    if (active[edge][o]) {
      w[o] = std::exp(alpha.at(edge, o) - mx);
      z += w[o];
    }
  if (z <= 0.0) throw ContractError("edge_softmax: no active ops on edge " + std::to_string(edge));
  for (double& x : w) x /= z;
  return w;
}

CellGenotype discretize_cell(const Tensor& alpha, const OpMask& active) {
  CellGenotype cell;
  for (std::size_t node = 0; node < kNodesPerCell; ++node) {
    const std::size_t fan = node + 2;
    // Score every incoming edge by its best non-none softmax weight.
    struct Scored {
      std::size_t input_state;
      std::size_t edge;
      double weight;
      OpKind op;
    };
    std::vector<Scored> scored;
    for (std::size_t in = 0; in < fan; ++in) {
      const std::size_t e = edge_index(node, in);
      const std::vector<double> w = edge_softmax(alpha, e, active);
      double best_w = -1.0;
      std::size_t best_op = 0;
      for (std::size_t o = 1; o < kOpCount; ++o) {  // skip none
        if (!active[e][o]) continue;
        if (w[o] > best_w) {  // strict: ties keep the lower op index
          best_w = w[o];
          best_op = o;
        }
      }
      if (best_w < 0.0)
        throw ContractError("discretize: edge " + std::to_string(e) + " has only none left");
      scored.push_back(Scored{in, e, best_w, static_cast<OpKind>(best_op)});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return a.edge < b.edge;
    });
    GenotypeEdge a{scored[0].input_state, scored[0].op};
    GenotypeEdge b{scored[1].input_state, scored[1].op};
    if (a.input_state > b.input_state) std::swap(a, b);
    cell.nodes[node] = {a, b};
  }
  return cell;
}

Genotype discretize(const Tensor& alpha_normal, const Tensor& alpha_reduction) {
  const OpMask all = full_op_mask();
  Genotype g;
  g.normal = discretize_cell(alpha_normal, all);
  g.reduction = discretize_cell(alpha_reduction, all);
  validate_genotype(g);
  return g;
}

std::vector<std::size_t> reduction_positions(std::size_t cells) {
  std::vector<std::size_t> out;
  const std::size_t a = cells / 3;
  const std::size_t b = 2 * cells / 3;
  out.push_back(a);
  if (b != a) out.push_back(b);
  return out;
}

namespace {

// Init gain by parameter role. He gain 2 only where the output feeds a relu;
// plain matmuls (tanh, gates, low-rank factors, stem, head) keep gain 1 so a
// layer preserves variance. The cell projection reads a concat of node
// outputs that are each a sum of two edge outputs, so its effective fan-in is
// twice its row count: gain 1/2 keeps stacked cells variance-neutral at init.
// Without this, deep stacks gain ~2x amplitude per cell and saturate the
// tanh/gate paths, making some genotypes untrainable.
double matrix_gain(std::string_view name) {
  if (name.ends_with(".linear_relu.W")) return 2.0;
  if (name.ends_with(".proj.W")) return 0.5;
  return 1.0;
}

void fill_matrix(Tensor& t, double gain, Rng& rng) {
  const double s = std::sqrt(gain / static_cast<double>(t.shape()[0]));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = s * rng.normal();
}

// Ops with parameters register them under <prefix>.<op>.<name>.
void add_op_params(ParamStore& store, const std::string& prefix, OpKind op, std::size_t width,
                   Rng& rng) {
  auto mat = [&rng](const std::string& name, std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    fill_matrix(t, matrix_gain(name), rng);
    return t;
  };
  const std::string base = prefix + "." + op_kind_name(op);
  switch (op) {
    case OpKind::linear_relu:
    case OpKind::linear_tanh:
      store.add(base + ".W", mat(base + ".W", width, width));
      store.add(base + ".b", Tensor({width}));
      break;
    case OpKind::low_rank_linear: {
      const std::size_t r = low_rank(width);
      store.add(base + ".W1", mat(base + ".W1", width, r));
      store.add(base + ".W2", mat(base + ".W2", r, width));
      store.add(base + ".b", Tensor({width}));
      break;
    }
    case OpKind::gated_linear:
      store.add(base + ".W", mat(base + ".W", width, width));
      store.add(base + ".b", Tensor({width}));
      store.add(base + ".G", mat(base + ".G", width, width));
      store.add(base + ".gb", Tensor({width}));
      break;
    default:
      break;  // none, skip, pooling are parameter-free
  }
}

struct ParamLookup {
  const Tape* tape;
  const BoundParams* bound;
  const ParamStore* store;

  Var operator()(const std::string& name) const {
    const int idx = store->index_of(name);
    if (idx < 0) throw ContractError("missing parameter: " + name);
    return bound->vars[static_cast<std::size_t>(idx)];
  }
};

Var apply_op(Tape& tape, OpKind op, Var x, const std::string& prefix, const ParamLookup& param) {
  const std::string base = prefix + "." + op_kind_name(op);
  switch (op) {
    case OpKind::none:
      throw ContractError("apply_op: none has no forward");
    case OpKind::skip_connect:
      return x;
    case OpKind::linear_relu:
      return tape.relu(tape.add(tape.matmul(x, param(base + ".W")), param(base + ".b")));
    case OpKind::linear_tanh:
      return tape.tanh_act(tape.add(tape.matmul(x, param(base + ".W")), param(base + ".b")));
    case OpKind::low_rank_linear:
      return tape.add(tape.matmul(tape.matmul(x, param(base + ".W1")), param(base + ".W2")),
                      param(base + ".b"));
    case OpKind::group_avg_pool:
      return tape.group_avg(x, kPoolGroup, true);
    case OpKind::group_max_pool:
      return tape.group_max(x, kPoolGroup, true);
    case OpKind::gated_linear: {
      Var lin = tape.add(tape.matmul(x, param(base + ".W")), param(base + ".b"));
      Var gate = tape.sigmoid(tape.add(tape.matmul(x, param(base + ".G")), param(base + ".gb")));
      return tape.mul(lin, gate);
    }
  }
  throw ContractError("apply_op: bad op");
}

// Normalization folded into the graph as x*inv_std + shift, so gradients at
// the input leaf are in pixel units.
Var apply_norm_graph(Tape& tape, Var x, const NormStats& stats) {
  const std::size_t d = stats.mean.size();
  Tensor inv({d}), shift({d});
  for (std::size_t j = 0; j < d; ++j) {
    inv.data()[j] = 1.0 / stats.stddev[j];
    shift.data()[j] = -stats.mean[j] / stats.stddev[j];
  }
  return tape.add(tape.mul(x, tape.leaf(std::move(inv))), tape.leaf(std::move(shift)));
}

// Adapt an input state of width in_w to cell width w by average pooling.
Var adapt_state(Tape& tape, Var s, std::size_t in_w, std::size_t w) {
  if (in_w == w) return s;
  if (in_w % w != 0)
    throw ConfigError("cell input width " + std::to_string(in_w) + " not reducible to " +
                      std::to_string(w));
  return tape.group_avg(s, in_w / w, false);
}

void check_cell_width(std::size_t w) {
  if (w < kPoolGroup || w % kPoolGroup != 0)
    throw ConfigError("cell width " + std::to_string(w) + " not divisible by pooling group size " +
                      std::to_string(kPoolGroup));
}

void init_weight_values(ParamStore& store, Rng& rng) {
  for (std::size_t i = 0; i < store.count(); ++i) {
    if (store.group(i) != ParamGroup::weights) continue;
    Tensor& t = store.value(i);
    if (t.rank() == 2) {
      fill_matrix(t, matrix_gain(store.name(i)), rng);
    } else {
      for (std::size_t j = 0; j < t.size(); ++j) t.data()[j] = 0.0;
    }
  }
}

}  // namespace

Supernet::Supernet(SupernetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.cells < 2) throw ConfigError("supernet: need at least 2 cells");
  if (cfg_.input_dim == 0 || cfg_.classes < 2) throw ConfigError("supernet: bad dimensions");
  reductions_ = reduction_positions(cfg_.cells);
  mask_normal_ = full_op_mask();
  mask_reduction_ = full_op_mask();

  Rng rng = Rng(seed).derive("supernet-init");
  auto mat = [&rng](const std::string& name, std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    fill_matrix(t, matrix_gain(name), rng);
    return t;
  };

  store_.add("stem.W", mat("stem.W", cfg_.input_dim, cfg_.width));
  store_.add("stem.b", Tensor({cfg_.width}));

  for (std::size_t k = 0; k < cfg_.cells; ++k) {
    const std::size_t w = cell_width(k);
    check_cell_width(w);
    const std::string cell = "c" + std::to_string(k);
    for (std::size_t e = 0; e < kEdgesPerCell; ++e) {
      const std::string prefix = cell + ".e" + std::to_string(e);
      for (std::size_t o = 0; o < kOpCount; ++o)
        add_op_params(store_, prefix, static_cast<OpKind>(o), w, rng);
    }
    if (k + 1 < cfg_.cells) {
      store_.add(cell + ".proj.W", mat(cell + ".proj.W", kNodesPerCell * w, w));
      store_.add(cell + ".proj.b", Tensor({w}));
    }
  }

  const std::size_t w_last = cell_width(cfg_.cells - 1);
  store_.add("head.W", mat("head.W", w_last, cfg_.classes));
  store_.add("head.b", Tensor({cfg_.classes}));

  auto alpha_init = [&rng]() {
    Tensor a({kEdgesPerCell, kOpCount});
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = 1e-3 * rng.normal();
    return a;
  };
  alpha_normal_idx_ =
      static_cast<int>(store_.add("alpha.normal", alpha_init(), ParamGroup::arch));
  alpha_reduction_idx_ =
      static_cast<int>(store_.add("alpha.reduction", alpha_init(), ParamGroup::arch));
}

CellKind Supernet::cell_kind(std::size_t cell) const {
  for (const std::size_t r : reductions_)
    if (cell == r) return CellKind::reduction;
  return CellKind::normal;
}

std::size_t Supernet::cell_width(std::size_t cell) const {
  std::size_t w = cfg_.width;
  for (const std::size_t r : reductions_)
    if (cell >= r) w /= 2;
  return w;
}

const OpMask& Supernet::mask(CellKind kind) const {
  return kind == CellKind::normal ? mask_normal_ : mask_reduction_;
}

std::size_t Supernet::active_count(CellKind kind, std::size_t edge) const {
  const OpMask& m = mask(kind);
  std::size_t c = 0;
  for (const bool b : m[edge]) c += b;
  return c;
}

void Supernet::drop_op(CellKind kind, std::size_t edge, OpKind op) {
  OpMask& m = kind == CellKind::normal ? mask_normal_ : mask_reduction_;
  if (!m[edge][static_cast<std::size_t>(op)])
    throw ContractError("drop_op: already dropped " + std::string(op_kind_name(op)));
  if (active_count(kind, edge) <= 1) throw ContractError("drop_op: last op on edge");
  m[edge][static_cast<std::size_t>(op)] = false;
}

void Supernet::set_op_active(CellKind kind, std::size_t edge, OpKind op, bool active) {
  OpMask& m = kind == CellKind::normal ? mask_normal_ : mask_reduction_;
  const auto o = static_cast<std::size_t>(op);
  if (!active && m[edge][o] && active_count(kind, edge) <= 1)
    throw ContractError("set_op_active: cannot deactivate the last op on an edge");
  m[edge][o] = active;
}

bool Supernet::op_active(CellKind kind, std::size_t edge, OpKind op) const {
  return mask(kind)[edge][static_cast<std::size_t>(op)];
}

std::vector<double> Supernet::edge_weights(CellKind kind, std::size_t edge) const {
  const Tensor& alpha = store_.value(
      static_cast<std::size_t>(kind == CellKind::normal ? alpha_normal_idx_ : alpha_reduction_idx_));
  return edge_softmax(alpha, edge, mask(kind));
}

Genotype Supernet::discretize() const {
  Genotype g;
  g.normal = discretize_cell(store_.value(static_cast<std::size_t>(alpha_normal_idx_)),
                             mask_normal_);
  g.reduction = discretize_cell(store_.value(static_cast<std::size_t>(alpha_reduction_idx_)),
                                mask_reduction_);
  validate_genotype(g);
  return g;
}

void Supernet::reinit_weights(std::uint64_t seed) {
  Rng rng = Rng(seed).derive("supernet-reinit");
  init_weight_values(store_, rng);
}

Var Supernet::build_logits(Tape& tape, const BoundParams& bound, Var pixel_input) const {
  const ParamLookup param{&tape, &bound, &store_};
  Var x = pixel_input;
  if (norm_) x = apply_norm_graph(tape, x, *norm_);
  Var stem = tape.add(tape.matmul(x, param("stem.W")), param("stem.b"));

  // Mask bias turns dropped ops into exact softmax zeros on the tape.
  auto masked_weights = [&](CellKind kind) {
    const OpMask& m = mask(kind);
    Tensor bias({kEdgesPerCell, kOpCount});
    for (std::size_t e = 0; e < kEdgesPerCell; ++e)
      for (std::size_t o = 0; o < kOpCount; ++o) bias.at(e, o) = m[e][o] ? 0.0 : -1e9;
    Var alpha = bound.vars[static_cast<std::size_t>(
        kind == CellKind::normal ? alpha_normal_idx_ : alpha_reduction_idx_)];
    return tape.softmax(tape.add(alpha, tape.leaf(std::move(bias))));
  };
  const Var weights_normal = masked_weights(CellKind::normal);
  const Var weights_reduction = masked_weights(CellKind::reduction);

  auto weight_scalar = [&](CellKind kind, std::size_t e, std::size_t o) {
    Tensor onehot({kEdgesPerCell, kOpCount});
    onehot.at(e, o) = 1.0;
    Var w = kind == CellKind::normal ? weights_normal : weights_reduction;
    return tape.sum(tape.mul(w, tape.leaf(std::move(onehot))));
  };

  Var s0 = stem, s1 = stem;
  std::size_t w0 = cfg_.width, w1 = cfg_.width;
  for (std::size_t k = 0; k < cfg_.cells; ++k) {
    const std::size_t w = cell_width(k);
    const CellKind kind = cell_kind(k);
    const std::string cell = "c" + std::to_string(k);
    std::vector<Var> states = {adapt_state(tape, s0, w0, w), adapt_state(tape, s1, w1, w)};
    std::vector<Var> node_outs;
    for (std::size_t node = 0; node < kNodesPerCell; ++node) {
      Var acc{};
      for (std::size_t in = 0; in < node + 2; ++in) {
        const std::size_t e = edge_index(node, in);
        const std::string prefix = cell + ".e" + std::to_string(e);
        Var mixed{};
        for (std::size_t o = 1; o < kOpCount; ++o) {  // none contributes zero
          if (!op_active(kind, e, static_cast<OpKind>(o))) continue;
          Var branch = apply_op(tape, static_cast<OpKind>(o), states[in], prefix, param);
          Var weighted = tape.mul(branch, weight_scalar(kind, e, o));
          mixed = mixed.valid() ? tape.add(mixed, weighted) : weighted;
        }
        if (!mixed.valid()) mixed = tape.scale(states[in], 0.0);  // only none active
        acc = acc.valid() ? tape.add(acc, mixed) : mixed;
      }
      states.push_back(acc);
      node_outs.push_back(acc);
    }
    if (k + 1 < cfg_.cells) {
      Var cat = tape.concat(std::span<const Var>(node_outs.data(), node_outs.size()));
      Var out = tape.add(tape.matmul(cat, param(cell + ".proj.W")), param(cell + ".proj.b"));
      s0 = s1;
      w0 = w1;
      s1 = out;
      w1 = w;
    } else {
      Var mean = tape.scale(
          tape.add(tape.add(node_outs[0], node_outs[1]), tape.add(node_outs[2], node_outs[3])),
          1.0 / static_cast<double>(kNodesPerCell));
      return tape.add(tape.matmul(mean, param("head.W")), param("head.b"));
    }
  }
  throw ContractError("supernet: unreachable");
}

NetworkInstance::NetworkInstance(Genotype genotype, InstanceConfig cfg, std::uint64_t seed)
    : genotype_(std::move(genotype)), cfg_(cfg) {
  validate_genotype(genotype_);
  if (cfg_.cells < 2) throw ConfigError("network: need at least 2 cells");
  if (cfg_.input_dim == 0 || cfg_.classes < 2) throw ConfigError("network: bad dimensions");
  reductions_ = reduction_positions(cfg_.cells);

  Rng rng = Rng(seed).derive("instance-init");
  auto mat = [&rng](const std::string& name, std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    fill_matrix(t, matrix_gain(name), rng);
    return t;
  };

  store_.add("stem.W", mat("stem.W", cfg_.input_dim, cfg_.width));
  store_.add("stem.b", Tensor({cfg_.width}));

  for (std::size_t k = 0; k < cfg_.cells; ++k) {
    const std::size_t w = cell_width(k);
    check_cell_width(w);
    const CellGenotype& cell_g =
        cell_kind(k) == CellKind::normal ? genotype_.normal : genotype_.reduction;
    const std::string cell = "c" + std::to_string(k);
    for (std::size_t node = 0; node < kNodesPerCell; ++node)
      for (std::size_t slot = 0; slot < 2; ++slot) {
        const std::string prefix =
            cell + ".n" + std::to_string(node) + ".s" + std::to_string(slot);
        add_op_params(store_, prefix, cell_g.nodes[node][slot].op, w, rng);
      }
    if (k + 1 < cfg_.cells) {
      store_.add(cell + ".proj.W", mat(cell + ".proj.W", kNodesPerCell * w, w));
      store_.add(cell + ".proj.b", Tensor({w}));
    }
  }

  const std::size_t w_last = cell_width(cfg_.cells - 1);
  store_.add("head.W", mat("head.W", w_last, cfg_.classes));
  store_.add("head.b", Tensor({cfg_.classes}));
}

CellKind NetworkInstance::cell_kind(std::size_t cell) const {
  for (const std::size_t r : reductions_)
    if (cell == r) return CellKind::reduction;
  return CellKind::normal;
}

std::size_t NetworkInstance::cell_width(std::size_t cell) const {
  std::size_t w = cfg_.width;
  for (const std::size_t r : reductions_)
    if (cell >= r) w /= 2;
  return w;
}

Var NetworkInstance::build_logits(Tape& tape, const BoundParams& bound, Var pixel_input) const {
  const ParamLookup param{&tape, &bound, &store_};
  Var x = pixel_input;
  if (norm_) x = apply_norm_graph(tape, x, *norm_);
  Var stem = tape.add(tape.matmul(x, param("stem.W")), param("stem.b"));

  Var s0 = stem, s1 = stem;
  std::size_t w0 = cfg_.width, w1 = cfg_.width;
  for (std::size_t k = 0; k < cfg_.cells; ++k) {
    const std::size_t w = cell_width(k);
    const CellGenotype& cell_g =
        cell_kind(k) == CellKind::normal ? genotype_.normal : genotype_.reduction;
    const std::string cell = "c" + std::to_string(k);
    std::vector<Var> states = {adapt_state(tape, s0, w0, w), adapt_state(tape, s1, w1, w)};
    std::vector<Var> node_outs;
    for (std::size_t node = 0; node < kNodesPerCell; ++node) {
      Var acc{};
      for (std::size_t slot = 0; slot < 2; ++slot) {
        const GenotypeEdge& e = cell_g.nodes[node][slot];
        const std::string prefix =
            cell + ".n" + std::to_string(node) + ".s" + std::to_string(slot);
        Var out = apply_op(tape, e.op, states[e.input_state], prefix, param);
        acc = acc.valid() ? tape.add(acc, out) : out;
      }
      states.push_back(acc);
      node_outs.push_back(acc);
    }
    if (k + 1 < cfg_.cells) {
      Var cat = tape.concat(std::span<const Var>(node_outs.data(), node_outs.size()));
      Var out = tape.add(tape.matmul(cat, param(cell + ".proj.W")), param(cell + ".proj.b"));
      s0 = s1;
      w0 = w1;
      s1 = out;
      w1 = w;
    } else {
      Var mean = tape.scale(
          tape.add(tape.add(node_outs[0], node_outs[1]), tape.add(node_outs[2], node_outs[3])),
          1.0 / static_cast<double>(kNodesPerCell));
      return tape.add(tape.matmul(mean, param("head.W")), param("head.b"));
    }
  }
  throw ContractError("network: unreachable");
}

NetworkInstance instantiate(const Genotype& genotype, std::size_t cells, std::size_t width,
                            std::size_t classes, std::size_t input_dim, std::uint64_t seed) {
  InstanceConfig cfg;
  cfg.cells = cells;
  cfg.width = width;
  cfg.classes = classes;
  cfg.input_dim = input_dim;
  return NetworkInstance(genotype, cfg, seed);
}

Tensor model_logits(const DifferentiableModel& model, const Tensor& pixel_batch) {
  Tape tape;
  BoundParams bound = bind(tape, model.param_store());
  Var input = tape.leaf(pixel_batch);
  Var logits = model.build_logits(tape, bound, input);
  return tape.value(logits);
}

std::vector<int> model_predictions(const DifferentiableModel& model, const Tensor& pixel_batch) {
  const Tensor logits = model_logits(model, pixel_batch);
  std::vector<int> preds(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    preds[i] = static_cast<int>(best);
  }
  return preds;
}

double model_accuracy(const DifferentiableModel& model, const Dataset& data) {
  const std::vector<int> preds = model_predictions(model, data.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == data.labels[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace nasaudit
