#include "nasaudit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nasaudit/error.hpp"

namespace nasaudit {

namespace {

// Rows/cols with 1-D tensors treated as a single row, so row-wise ops
// (softmax, pooling) work on both vectors and batches.
std::size_t row_count(const Tensor& t) { return t.rank() == 1 ? 1 : t.rows(); }
std::size_t col_count(const Tensor& t) { return t.rank() == 1 ? t.size() : t.cols(); }

void check_2d(const Tensor& t, const char* who) {
  if (t.rank() != 2) throw ShapeError(std::string(who) + ": expected a 2-D tensor, got " + t.shape_string());
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::scale: return "scale";
    case Op::relu: return "relu";
    case Op::tanh_act: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::mean: return "mean";
    case Op::sum: return "sum";
    case Op::concat: return "concat";
    case Op::group_avg: return "group_avg";
    case Op::group_max: return "group_max";
    case Op::mul: return "mul";
  }
  return "?";
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check_2d(ta, "matmul");
  check_2d(tb, "matmul");
  if (ta.cols() != tb.rows())
    throw ShapeError("matmul: " + ta.shape_string() + " x " + tb.shape_string());
  const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  const double* pa = ta.data();
  const double* pb = tb.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      if (av == 0.0) continue;
      const double* brow = pb + l * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Node node;
  node.op = Op::matmul;
  node.a = a.id;
  node.b = b.id;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  Tensor out = ta;
  if (ta.same_shape(tb)) {
    double* po = out.data();
    const double* pb = tb.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] += pb[i];
  } else if (ta.rank() == 2 && tb.rank() == 1 && ta.cols() == tb.size()) {
    double* po = out.data();
    const double* pb = tb.data();
    for (std::size_t r = 0; r < ta.rows(); ++r)
      for (std::size_t c = 0; c < ta.cols(); ++c) po[r * ta.cols() + c] += pb[c];
  } else {
    throw ShapeError("add: " + ta.shape_string() + " + " + tb.shape_string());
  }
  Node node;
  node.op = Op::add;
  node.a = a.id;
  node.b = b.id;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::scale(Var a, double c) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
  Node node;
  node.op = Op::scale;
  node.a = a.id;
  node.factor = c;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(0.0, out.data()[i]);
  Node node;
  node.op = Op::relu;
  node.a = a.id;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::tanh_act(Var a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(out.data()[i]);
  Node node;
  node.op = Op::tanh_act;
  node.a = a.id;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out.data()[i];
    out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Node node;
  node.op = Op::sigmoid;
  node.a = a.id;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::softmax(Var a) {
  const Tensor& ta = value(a);
  Tensor out = ta;
  const std::size_t rows = row_count(ta), cols = col_count(ta);
  if (cols == 0) throw ShapeError("softmax: empty rows in " + ta.shape_string());
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= z;
  }
  Node node;
  node.op = Op::softmax;
  node.a = a.id;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::log_softmax(Var a) {
  const Tensor& ta = value(a);
  Tensor out = ta;
  const std::size_t rows = row_count(ta), cols = col_count(ta);
  if (cols == 0) throw ShapeError("log_softmax: empty rows in " + ta.shape_string());
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) row[c] -= lz;
  }
  Node node;
  node.op = Op::log_softmax;
  node.a = a.id;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::mean(Var a) {
  const Tensor& ta = value(a);
  if (ta.size() == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) acc += ta.data()[i];
  Node node;
  node.op = Op::mean;
  node.a = a.id;
  node.value = Tensor::scalar(acc / static_cast<double>(ta.size()));
  return push(std::move(node));
}

Var Tape::sum(Var a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) acc += ta.data()[i];
  Node node;
  node.op = Op::sum;
  node.a = a.id;
  node.value = Tensor::scalar(acc);
  return push(std::move(node));
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rows = row_count(value(parts[0]));
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    if (row_count(t) != rows)
      throw ShapeError("concat: row mismatch, " + t.shape_string() + " vs " +
                       value(parts[0]).shape_string());
    total += col_count(t);
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    const std::size_t c = col_count(t);
    for (std::size_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * total + off, t.data() + r * c, c * sizeof(double));
    off += c;
  }
  Node node;
  node.op = Op::concat;
  node.parts.reserve(parts.size());
  for (Var p : parts) node.parts.push_back(p.id);
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::group_avg(Var a, std::size_t group, bool keep_width) {
  const Tensor& ta = value(a);
  const std::size_t rows = row_count(ta), cols = col_count(ta);
  if (group == 0 || cols % group != 0)
    throw ShapeError("group_avg: width " + std::to_string(cols) + " not divisible by group " +
                     std::to_string(group));
  const std::size_t groups = cols / group;
  Tensor out(keep_width ? std::vector<std::size_t>{rows, cols}
                        : std::vector<std::size_t>{rows, groups});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t g = 0; g < groups; ++g) {
      double acc = 0.0;
      for (std::size_t j = 0; j < group; ++j) acc += ta.data()[r * cols + g * group + j];
      acc /= static_cast<double>(group);
      if (keep_width) {
        for (std::size_t j = 0; j < group; ++j) out.data()[r * cols + g * group + j] = acc;
      } else {
        out.data()[r * groups + g] = acc;
      }
    }
  }
  Node node;
  node.op = Op::group_avg;
  node.a = a.id;
  node.group = group;
  node.keep_width = keep_width;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::group_max(Var a, std::size_t group, bool keep_width) {
  const Tensor& ta = value(a);
  const std::size_t rows = row_count(ta), cols = col_count(ta);
  if (group == 0 || cols % group != 0)
    throw ShapeError("group_max: width " + std::to_string(cols) + " not divisible by group " +
                     std::to_string(group));
  const std::size_t groups = cols / group;
  Tensor out(keep_width ? std::vector<std::size_t>{rows, cols}
                        : std::vector<std::size_t>{rows, groups});
  std::vector<std::size_t> arg(rows * groups);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t g = 0; g < groups; ++g) {
      std::size_t best = r * cols + g * group;
      for (std::size_t j = 1; j < group; ++j) {
        const std::size_t idx = r * cols + g * group + j;
        if (ta.data()[idx] > ta.data()[best]) best = idx;  // first max wins ties
      }
      arg[r * groups + g] = best;
      const double v = ta.data()[best];
      if (keep_width) {
        for (std::size_t j = 0; j < group; ++j) out.data()[r * cols + g * group + j] = v;
      } else {
        out.data()[r * groups + g] = v;
      }
    }
  }
  Node node;
  node.op = Op::group_max;
  node.a = a.id;
  node.group = group;
  node.keep_width = keep_width;
  node.argmax = std::move(arg);
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  Tensor out = ta;
  if (ta.same_shape(tb)) {
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= tb.data()[i];
  } else if (tb.size() == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= tb.data()[0];
  } else if (ta.rank() == 2 && tb.rank() == 1 && ta.cols() == tb.size()) {
    for (std::size_t r = 0; r < ta.rows(); ++r)
      for (std::size_t c = 0; c < ta.cols(); ++c) out.data()[r * ta.cols() + c] *= tb.data()[c];
  } else {
    throw ShapeError("mul: " + ta.shape_string() + " * " + tb.shape_string());
  }
  Node node;
  node.op = Op::mul;
  node.a = a.id;
  node.b = b.id;
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::parent_of(Var v, int slot) const {
  const Node& n = node(v);
  if (n.op == Op::concat) {
    if (slot < 0 || slot >= static_cast<int>(n.parts.size())) return Var{};
    return Var{n.parts[static_cast<std::size_t>(slot)]};
  }
  return Var{slot == 0 ? n.a : n.b};
}

std::vector<Var> Tape::nodes_with_op(Op op) const {
  std::vector<Var> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].op == op) out.push_back(Var{static_cast<int>(i)});
  return out;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
}

const Tensor& Tape::grad(Var v) const {
  if (grads_.empty()) throw ContractError("grad: backward has not run on this tape");
  return grads_[static_cast<std::size_t>(v.id)];
}

void Tape::backward(Var loss) {
  if (!loss.valid() || static_cast<std::size_t>(loss.id) >= nodes_.size())
    throw ContractError("backward: invalid loss node");
  if (node(loss).value.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + node(loss).value.shape_string());

  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads_.emplace_back(n.value.shape());
  grads_[static_cast<std::size_t>(loss.id)].data()[0] = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& gy = grads_[static_cast<std::size_t>(id)];
    bool any = false;
    for (std::size_t i = 0; i < gy.size() && !any; ++i) any = gy.data()[i] != 0.0;
    if (!any || n.op == Op::leaf) continue;

    switch (n.op) {
      case Op::matmul: {
        const Tensor& ta = nodes_[static_cast<std::size_t>(n.a)].value;
        const Tensor& tb = nodes_[static_cast<std::size_t>(n.b)].value;
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        Tensor& gb = grads_[static_cast<std::size_t>(n.b)];
        const std::size_t m = ta.rows(), k = ta.cols(), nn = tb.cols();
        // dA += dY * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j) {
            const double g = gy.data()[i * nn + j];
            if (g == 0.0) continue;
            for (std::size_t l = 0; l < k; ++l) ga.data()[i * k + l] += g * tb.data()[l * nn + j];
          }
        // dB += A^T * dY
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            const double av = ta.data()[i * k + l];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < nn; ++j) gb.data()[l * nn + j] += av * gy.data()[i * nn + j];
          }
        break;
      }
      case Op::add: {
        const Tensor& ta = nodes_[static_cast<std::size_t>(n.a)].value;
        const Tensor& tb = nodes_[static_cast<std::size_t>(n.b)].value;
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        Tensor& gb = grads_[static_cast<std::size_t>(n.b)];
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += gy.data()[i];
        if (ta.same_shape(tb)) {
          for (std::size_t i = 0; i < gb.size(); ++i) gb.data()[i] += gy.data()[i];
        } else {
          for (std::size_t r = 0; r < ta.rows(); ++r)
            for (std::size_t c = 0; c < ta.cols(); ++c)
              gb.data()[c] += gy.data()[r * ta.cols() + c];
        }
        break;
      }
      case Op::scale: {
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += n.factor * gy.data()[i];
        break;
      }
      case Op::relu: {
        const Tensor& ta = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        for (std::size_t i = 0; i < ga.size(); ++i)
          if (ta.data()[i] > 0.0) ga.data()[i] += gy.data()[i];
        break;
      }
      case Op::tanh_act: {
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        for (std::size_t i = 0; i < ga.size(); ++i) {
          const double y = n.value.data()[i];
          ga.data()[i] += gy.data()[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::sigmoid: {
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        for (std::size_t i = 0; i < ga.size(); ++i) {
          const double y = n.value.data()[i];
          ga.data()[i] += gy.data()[i] * y * (1.0 - y);
        }
        break;
      }
      case Op::softmax: {
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        const std::size_t rows = row_count(n.value), cols = col_count(n.value);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = n.value.data() + r * cols;
          const double* g = gy.data() + r * cols;
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
          for (std::size_t c = 0; c < cols; ++c) ga.data()[r * cols + c] += y[c] * (g[c] - dot);
        }
        break;
      }
      case Op::log_softmax: {
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        const std::size_t rows = row_count(n.value), cols = col_count(n.value);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = n.value.data() + r * cols;  // log-probabilities
          const double* g = gy.data() + r * cols;
          double gsum = 0.0;
          for (std::size_t c = 0; c < cols; ++c) gsum += g[c];
          for (std::size_t c = 0; c < cols; ++c)
            ga.data()[r * cols + c] += g[c] - std::exp(y[c]) * gsum;
        }
        break;
      }
      case Op::mean: {
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        const double g = gy.data()[0] / static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += g;
        break;
      }
      case Op::sum: {
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        const double g = gy.data()[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += g;
        break;
      }
      case Op::concat: {
        const std::size_t rows = row_count(n.value);
        const std::size_t total = col_count(n.value);
        std::size_t off = 0;
        for (int pid : n.parts) {
          Tensor& gp = grads_[static_cast<std::size_t>(pid)];
          const std::size_t c = col_count(nodes_[static_cast<std::size_t>(pid)].value);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) gp.data()[r * c + j] += gy.data()[r * total + off + j];
          off += c;
        }
        break;
      }
      case Op::group_avg: {
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        const std::size_t cols = col_count(nodes_[static_cast<std::size_t>(n.a)].value);
        const std::size_t rows = row_count(nodes_[static_cast<std::size_t>(n.a)].value);
        const std::size_t groups = cols / n.group;
        const double inv = 1.0 / static_cast<double>(n.group);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t g = 0; g < groups; ++g) {
            double acc = 0.0;
            if (n.keep_width) {
              for (std::size_t j = 0; j < n.group; ++j) acc += gy.data()[r * cols + g * n.group + j];
            } else {
              acc = gy.data()[r * groups + g];
            }
            acc *= inv;
            for (std::size_t j = 0; j < n.group; ++j) ga.data()[r * cols + g * n.group + j] += acc;
          }
        break;
      }
      case Op::group_max: {
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        const std::size_t cols = col_count(nodes_[static_cast<std::size_t>(n.a)].value);
        const std::size_t rows = row_count(nodes_[static_cast<std::size_t>(n.a)].value);
        const std::size_t groups = cols / n.group;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t g = 0; g < groups; ++g) {
            double acc = 0.0;
            if (n.keep_width) {
              for (std::size_t j = 0; j < n.group; ++j) acc += gy.data()[r * cols + g * n.group + j];
            } else {
              acc = gy.data()[r * groups + g];
            }
            ga.data()[n.argmax[r * groups + g]] += acc;
          }
        break;
      }
      case Op::mul: {
        const Tensor& ta = nodes_[static_cast<std::size_t>(n.a)].value;
        const Tensor& tb = nodes_[static_cast<std::size_t>(n.b)].value;
        Tensor& ga = grads_[static_cast<std::size_t>(n.a)];
        Tensor& gb = grads_[static_cast<std::size_t>(n.b)];
        if (ta.same_shape(tb)) {
          for (std::size_t i = 0; i < ga.size(); ++i) {
            ga.data()[i] += gy.data()[i] * tb.data()[i];
            gb.data()[i] += gy.data()[i] * ta.data()[i];
          }
        } else if (tb.size() == 1) {
          for (std::size_t i = 0; i < ga.size(); ++i) {
            ga.data()[i] += gy.data()[i] * tb.data()[0];
            gb.data()[0] += gy.data()[i] * ta.data()[i];
          }
        } else {
          for (std::size_t r = 0; r < ta.rows(); ++r)
            for (std::size_t c = 0; c < ta.cols(); ++c) {
              const std::size_t i = r * ta.cols() + c;
              ga.data()[i] += gy.data()[i] * tb.data()[c];
              gb.data()[c] += gy.data()[i] * ta.data()[i];
            }
        }
        break;
      }
      case Op::leaf:
        break;
    }
  }
}

std::size_t ParamStore::add(std::string name, Tensor init, ParamGroup group) {
  if (index_of(name) >= 0) throw ContractError("duplicate parameter name: " + name);
  entries_.push_back(Entry{std::move(name), std::move(init), group});
  return entries_.size() - 1;
}

int ParamStore::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return static_cast<int>(i);
  return -1;
}

Tensor& ParamStore::value_of(std::string_view name) {
  const int i = index_of(name);
  if (i < 0) throw ContractError("unknown parameter: " + std::string(name));
  return entries_[static_cast<std::size_t>(i)].value;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.size();
  return n;
}

std::size_t ParamStore::scalar_count(ParamGroup g) const {
  std::size_t n = 0;
  for (const Entry& e : entries_)
    if (e.group == g) n += e.value.size();
  return n;
}

std::vector<double> ParamStore::flatten(ParamGroup g) const {
  std::vector<double> out;
  out.reserve(scalar_count(g));
  for (const Entry& e : entries_)
    if (e.group == g) out.insert(out.end(), e.value.data(), e.value.data() + e.value.size());
  return out;
}

void ParamStore::unflatten(ParamGroup g, const std::vector<double>& flat) {
  if (flat.size() != scalar_count(g)) throw ShapeError("unflatten: size mismatch");
  std::size_t off = 0;
  for (Entry& e : entries_)
    if (e.group == g) {
      std::memcpy(e.value.data(), flat.data() + off, e.value.size() * sizeof(double));
      off += e.value.size();
    }
}

BoundParams bind(Tape& tape, const ParamStore& store) {
  BoundParams b;
  b.vars.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) b.vars.push_back(tape.leaf(store.value(i)));
  return b;
}

bool Gradients::all_finite() const {
  for (const Tensor& t : by_index)
    if (!t.all_finite()) return false;
  return true;
}

double Gradients::squared_norm() const {
  double acc = 0.0;
  for (const Tensor& t : by_index)
    for (std::size_t i = 0; i < t.size(); ++i) acc += t.data()[i] * t.data()[i];
  return acc;
}

std::vector<double> Gradients::flatten(const ParamStore& store, ParamGroup g) const {
  std::vector<double> out;
  out.reserve(store.scalar_count(g));
  for (std::size_t i = 0; i < store.count(); ++i)
    if (store.group(i) == g) {
      const Tensor& t = by_index[i];
      out.insert(out.end(), t.data(), t.data() + t.size());
    }
  return out;
}

Gradients collect_gradients(const Tape& tape, const BoundParams& bound, const ParamStore& store) {
  if (bound.vars.size() != store.count())
    throw ContractError("collect_gradients: binding does not match store");
  Gradients g;
  g.by_index.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) g.by_index.push_back(tape.grad(bound.vars[i]));
  return g;
}

Var cross_entropy_loss(Tape& tape, Var logits, const std::vector<int>& labels) {
  const Tensor& lv = tape.value(logits);
  if (lv.rank() != 2) throw ShapeError("cross_entropy: logits must be [m,C], got " + lv.shape_string());
  const std::size_t m = lv.rows(), c = lv.cols();
  if (labels.size() != m)
    throw ShapeError("cross_entropy: " + std::to_string(m) + " rows vs " +
                     std::to_string(labels.size()) + " labels");
  Tensor onehot({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw ContractError("cross_entropy: label " + std::to_string(y) + " out of range");
    onehot.data()[i * c + static_cast<std::size_t>(y)] = 1.0;
  }
  Var logp = tape.log_softmax(logits);
  Var picked = tape.mul(logp, tape.leaf(std::move(onehot)));
  Var total = tape.sum(picked);
  return tape.scale(total, -1.0 / static_cast<double>(m));
}

Gradients finite_diff_grad(const std::function<double(const ParamStore&)>& f, ParamStore& params,
                           double h) {
  Gradients g;
  g.by_index.reserve(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) g.by_index.emplace_back(params.value(i).shape());
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor& t = params.value(i);
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double orig = t.data()[j];
      t.data()[j] = orig + h;
      const double up = f(params);
      t.data()[j] = orig - h;
      const double dn = f(params);
      t.data()[j] = orig;
      g.by_index[i].data()[j] = (up - dn) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace nasaudit
