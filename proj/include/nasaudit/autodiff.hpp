#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nasaudit/tensor.hpp"

namespace nasaudit {

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  scale,
  relu,
  tanh_act,
  sigmoid,
  softmax,
  log_softmax,
  mean,
  sum,
  concat,
  group_avg,
  group_max,
  mul,
};

const char* op_name(Op op);

// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Record of one forward pass. Nodes are appended in execution order, so
// parents always precede children and a single reverse sweep suffices.
// Single-threaded by design; independent tapes are freely movable.
class Tape {
 public:
  Var leaf(Tensor value);

  Var matmul(Var a, Var b);              // [m,k] x [k,n] -> [m,n]
  Var add(Var a, Var b);                 // same shape, or [m,n] + [n] row broadcast
  Var scale(Var a, double c);
  Var relu(Var a);
  Var tanh_act(Var a);
  Var sigmoid(Var a);
  Var softmax(Var a);                    // row-wise on 2-D, whole vector on 1-D
  Var log_softmax(Var a);
  Var mean(Var a);                       // scalar
  Var sum(Var a);                        // scalar
  Var concat(std::span<const Var> parts);  // along the feature (last) axis
  Var group_avg(Var a, std::size_t group, bool keep_width);
  Var group_max(Var a, std::size_t group, bool keep_width);
  Var mul(Var a, Var b);                 // elementwise; b may be [n] (row) or [1] (scalar)

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

  // Reverse sweep from a scalar loss; gradients for every node are filled.
  void backward(Var loss);
  const Tensor& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  Op op_of(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].op; }
  Var parent_of(Var v, int slot = 0) const;
  std::vector<Var> nodes_with_op(Op op) const;

  void clear();

 private:
  struct Node {
    Op op = Op::leaf;
    int a = -1;
    int b = -1;
    std::vector<int> parts;              // concat only
    Tensor value;
    double factor = 0.0;                 // scale only
    std::size_t group = 0;               // pooling only
    bool keep_width = false;             // pooling only
    std::vector<std::size_t> argmax;     // group_max only
  };

  Var push(Node node);
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// Named parameter tensors split between model weights and architectural
// parameters. Names are unique, insertion order is the canonical order.
enum class ParamGroup : std::uint8_t { weights = 0, arch = 1 };

class ParamStore {
 public:
  std::size_t add(std::string name, Tensor init, ParamGroup group = ParamGroup::weights);

  std::size_t count() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& value(std::size_t i) const { return entries_[i].value; }
  ParamGroup group(std::size_t i) const { return entries_[i].group; }

  int index_of(std::string_view name) const;
  Tensor& value_of(std::string_view name);

  std::size_t scalar_count() const;
  std::size_t scalar_count(ParamGroup g) const;

  // Concatenation of all tensors in a group, in store order.
  std::vector<double> flatten(ParamGroup g) const;
  void unflatten(ParamGroup g, const std::vector<double>& flat);

 private:
  struct Entry {
    std::string name;
    Tensor value;
    ParamGroup group;
  };
  std::vector<Entry> entries_;
};

// Tape leaves for every parameter of a store, index-aligned with it.
struct BoundParams {
  std::vector<Var> vars;
};

BoundParams bind(Tape& tape, const ParamStore& store);

// Per-parameter gradients, index-aligned with the originating store.
// Parameters unreachable from the loss hold zero tensors.
struct Gradients {
  std::vector<Tensor> by_index;

  bool all_finite() const;
  double squared_norm() const;
  std::vector<double> flatten(const ParamStore& store, ParamGroup g) const;
};

Gradients collect_gradients(const Tape& tape, const BoundParams& bound, const ParamStore& store);

// Mean cross-entropy of logits [m,C] against integer labels; built from
// log_softmax + one-hot masking so it stays inside the primitive set.
Var cross_entropy_loss(Tape& tape, Var logits, const std::vector<int>& labels);

// Central-difference gradient oracle. Evaluates f 2x per parameter entry;
// the store is restored exactly afterwards.
Gradients finite_diff_grad(const std::function<double(const ParamStore&)>& f, ParamStore& params,
                           double h);

// Anything that can build a logits graph from raw pixel-unit features.
// Poison crafting differentiates through this interface.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;
  virtual ParamStore& param_store() = 0;
  virtual const ParamStore& param_store() const = 0;
  virtual Var build_logits(Tape& tape, const BoundParams& bound, Var pixel_input) const = 0;
};

}  // namespace nasaudit
