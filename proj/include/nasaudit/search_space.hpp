#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nasaudit/autodiff.hpp"
#include "nasaudit/dataset.hpp"
#include "nasaudit/rng.hpp"

namespace nasaudit {

// Candidate operations, fixed order (index is the alpha column).
enum class OpKind : int {
  none = 0,
  skip_connect,
  linear_relu,
  linear_tanh,
  low_rank_linear,
  group_avg_pool,
  group_max_pool,
  gated_linear,
};

inline constexpr std::size_t kOpCount = 8;
inline constexpr std::size_t kNodesPerCell = 4;
inline constexpr std::size_t kEdgesPerCell = 14;  // 2 + 3 + 4 + 5
inline constexpr std::size_t kPoolGroup = 4;

const char* op_kind_name(OpKind op);
OpKind op_kind_from(const std::string& s);

// Edges enumerate (node, input_state) pairs, input-major within each node:
// node 0 -> edges 0..1, node 1 -> 2..4, node 2 -> 5..8, node 3 -> 9..13.
// input_state 0 = c_{k-2}, 1 = c_{k-1}, 2+t = internal node t.
std::size_t edge_index(std::size_t node, std::size_t input_state);
struct EdgeRef {
  std::size_t node;
  std::size_t input_state;
};
EdgeRef edge_ref(std::size_t edge);
std::string state_name(std::size_t input_state);
std::size_t state_from(const std::string& name);

enum class CellKind : int { normal = 0, reduction = 1 };

struct GenotypeEdge {
  std::size_t input_state = 0;
  OpKind op = OpKind::skip_connect;
  bool operator==(const GenotypeEdge&) const = default;
};

struct CellGenotype {
  // Per internal node, two chosen inputs ordered by input_state.
  std::array<std::array<GenotypeEdge, 2>, kNodesPerCell> nodes{};
  bool operator==(const CellGenotype&) const = default;
};

struct Genotype {
  CellGenotype normal;
  CellGenotype reduction;
  bool operator==(const Genotype&) const = default;
};

void validate_genotype(const Genotype& g);  // throws ContractError

// One line per cell: `normal: (c_k-2, linear_relu)(c_k-1, skip_connect) | ...`
std::string render_genotype(const Genotype& g);
Genotype parse_genotype(const std::string& text);
std::string genotype_dot(const Genotype& g, const std::string& title = "genotype");

Genotype random_genotype(Rng& rng);

// Closed-form genotype count for a cell with the given node count
// (prod over nodes of C(i+2,2) * 7^2), and the two-cell full space.
unsigned long long cell_space_size(std::size_t nodes = kNodesPerCell);
unsigned long long space_size();

using OpMask = std::array<std::array<bool, kOpCount>, kEdgesPerCell>;
OpMask full_op_mask();

// Softmax over active ops of one alpha row; inactive ops get weight 0.
std::vector<double> edge_softmax(const Tensor& alpha, std::size_t edge, const OpMask& active);

// Highest-weighted-op rule: per node keep the 2 incoming edges with the
// largest max-over-non-none softmax weight, each with its argmax non-none op.
// Ties break on (edge index, op index).
CellGenotype discretize_cell(const Tensor& alpha, const OpMask& active);
Genotype discretize(const Tensor& alpha_normal, const Tensor& alpha_reduction);

struct SupernetConfig {
  std::size_t cells = 4;
  std::size_t width = 16;
  std::size_t input_dim = 0;
  std::size_t classes = 0;
};

// Reduction cells sit at floor(L/3) and floor(2L/3); they halve the feature
// width by average-pooling their input states.
std::vector<std::size_t> reduction_positions(std::size_t cells);

class Supernet : public DifferentiableModel {
 public:
  Supernet(SupernetConfig cfg, std::uint64_t seed);

  ParamStore& param_store() override { return store_; }
  const ParamStore& param_store() const override { return store_; }
  Var build_logits(Tape& tape, const BoundParams& bound, Var pixel_input) const override;

  void set_norm_stats(NormStats stats) { norm_ = std::move(stats); }
  const SupernetConfig& config() const { return cfg_; }

  const OpMask& mask(CellKind kind) const;
  std::size_t active_count(CellKind kind, std::size_t edge) const;
  void drop_op(CellKind kind, std::size_t edge, OpKind op);
  // Reversible mask toggle for what-if pruning; deactivating the last op on
  // an edge is still refused.
  void set_op_active(CellKind kind, std::size_t edge, OpKind op, bool active);
  bool op_active(CellKind kind, std::size_t edge, OpKind op) const;

  // Softmax weights over active ops for one edge (for pruning decisions).
  std::vector<double> edge_weights(CellKind kind, std::size_t edge) const;

  Genotype discretize() const;
  void reinit_weights(std::uint64_t seed);  // fresh theta, alpha untouched

 private:
  CellKind cell_kind(std::size_t cell) const;
  std::size_t cell_width(std::size_t cell) const;

  SupernetConfig cfg_;
  std::vector<std::size_t> reductions_;
  ParamStore store_;
  std::optional<NormStats> norm_;
  OpMask mask_normal_;
  OpMask mask_reduction_;
  int alpha_normal_idx_ = -1;
  int alpha_reduction_idx_ = -1;
};

struct InstanceConfig {
  std::size_t cells = 6;
  std::size_t width = 16;
  std::size_t input_dim = 0;
  std::size_t classes = 0;
};

class NetworkInstance : public DifferentiableModel {
 public:
  NetworkInstance(Genotype genotype, InstanceConfig cfg, std::uint64_t seed);

  ParamStore& param_store() override { return store_; }
  const ParamStore& param_store() const override { return store_; }
  Var build_logits(Tape& tape, const BoundParams& bound, Var pixel_input) const override;

  void set_norm_stats(NormStats stats) { norm_ = std::move(stats); }
  const Genotype& genotype() const { return genotype_; }
  const InstanceConfig& config() const { return cfg_; }

 private:
  CellKind cell_kind(std::size_t cell) const;
  std::size_t cell_width(std::size_t cell) const;

  Genotype genotype_;
  InstanceConfig cfg_;
  std::vector<std::size_t> reductions_;
  ParamStore store_;
  std::optional<NormStats> norm_;
};

NetworkInstance instantiate(const Genotype& genotype, std::size_t cells, std::size_t width,
                            std::size_t classes, std::size_t input_dim, std::uint64_t seed);

// Logits for a pixel-unit batch on a fresh tape (no gradient kept).
Tensor model_logits(const DifferentiableModel& model, const Tensor& pixel_batch);
double model_accuracy(const DifferentiableModel& model, const Dataset& data);  // percent
std::vector<int> model_predictions(const DifferentiableModel& model, const Tensor& pixel_batch);

}  // namespace nasaudit
