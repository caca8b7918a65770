#pragma once

// Reverse-mode autodiff over a small fixed op vocabulary. Graphs are built
// define-by-run and are immutable afterwards; node order is construction
// order, which is already topological. evaluate() is a pure function of
// (graph, bindings) and every op output is checked finite.
//
// Graph-structured computation (convolution over octree graphs, pooling,
// padding) is compiled onto gather / scatter_add with constant index maps;
// those two are the only structure-aware primitives.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "octlat/tensor.hpp"

namespace octlat::ad {

enum class Op {
  kConst,
  kLeaf,  // input or parameter, bound by name at evaluate time
  kAdd,
  kSub,
  kMul,
  kScale,     // x * scalar attr
  kAddBias,   // [n,m] + [m] or [1,m], broadcast over rows
  kMulRow,    // [n,m] * [m] or [1,m], broadcast over rows
  kRowScale,  // [n,m] * constant per-row weight w[n]
  kMatmul,
  kGather,      // rows by constant index map; index -1 reads zeros
  kScatterAdd,  // rows accumulated by constant index map; index -1 drops
  kReshape,
  kConcat,  // axis 0 or 1
  kExp,
  kLog,
  kTanh,
  kSum,         // all elements -> [1]
  kSoftmaxXent,  // logits [n,C] with constant labels -> per-row loss [n]
  kSigmoidBce,   // elementwise stable BCE-with-logits against a target node
  kGaussianKl,   // elementwise KL(N(mu, e^logvar) || N(0,1))
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kConst: return "const";
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddBias: return "add_bias";
    case Op::kMulRow: return "mul_row";
    case Op::kRowScale: return "row_scale";
    case Op::kMatmul: return "matmul";
    case Op::kGather: return "gather";
    case Op::kScatterAdd: return "scatter_add";
    case Op::kReshape: return "reshape";
    case Op::kConcat: return "concat";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kSum: return "sum";
    case Op::kSoftmaxXent: return "softmax_xent";
    case Op::kSigmoidBce: return "sigmoid_bce";
    case Op::kGaussianKl: return "gaussian_kl";
  }
  return "?";
}

using NodeId = int;

struct Node {
  Op op;
  std::vector<NodeId> inputs;
  Shape shape;
  std::string name;  // "op#k" or the leaf name

  double scalar = 0;                // kScale
  int axis = 0;                     // kConcat
  std::vector<int64_t> indices;     // kGather / kScatterAdd / kSoftmaxXent labels
  std::vector<double> row_weights;  // kRowScale
  Tensor value;                     // kConst
  bool is_param = false;            // kLeaf only
};

class Graph;

struct EvalResult {
  std::vector<Tensor> values;
  const Tensor& operator[](NodeId id) const { return values[size_t(id)]; }
};

class Graph {
 public:
  // --- leaves ---------------------------------------------------------------

  NodeId input(const std::string& name, Shape shape) { return leaf(name, shape, false); }
  NodeId param(const std::string& name, Shape shape) { return leaf(name, shape, true); }

  NodeId constant(Tensor value, const std::string& label = "") {
    Node n;
    n.op = Op::kConst;
    n.shape = value.shape();
    n.value = std::move(value);
    return push(std::move(n), label);
  }

  // --- elementwise ----------------------------------------------------------

  NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }

  NodeId scale(NodeId a, double s) {
    Node n;
    n.op = Op::kScale;
    n.inputs = {a};
    n.shape = node(a).shape;
    n.scalar = s;
    return push(std::move(n));
  }

  NodeId exp(NodeId a) { return unary(Op::kExp, a); }
  NodeId log(NodeId a) { return unary(Op::kLog, a); }
  NodeId tanh(NodeId a) { return unary(Op::kTanh, a); }

  // --- broadcast over rows ----------------------------------------------------

  NodeId add_bias(NodeId x, NodeId b) { return rowwise(Op::kAddBias, x, b); }
  NodeId mul_row(NodeId x, NodeId g) { return rowwise(Op::kMulRow, x, g); }

  NodeId row_scale(NodeId x, std::vector<double> w) {
    const Node& xn = node(x);
    require(xn.shape.size() == 2, "row_scale", "input must be rank 2, got ",
            shape_str(xn.shape));
    require(int64_t(w.size()) == xn.shape[0], "row_scale", "weight count ",
            w.size(), " vs rows ", xn.shape[0]);
    Node n;
    n.op = Op::kRowScale;
    n.inputs = {x};
    n.shape = xn.shape;
    n.row_weights = std::move(w);
    return push(std::move(n));
  }

  // --- structure ------------------------------------------------------------

  NodeId matmul(NodeId a, NodeId b) {
    const Node& an = node(a);
    const Node& bn = node(b);
    require(an.shape.size() == 2 && bn.shape.size() == 2, "matmul",
            "operands must be rank 2, got ", shape_str(an.shape), " and ",
            shape_str(bn.shape));
    require(an.shape[1] == bn.shape[0], "matmul", "inner extents differ: ",
            shape_str(an.shape), " x ", shape_str(bn.shape));
    Node n;
    n.op = Op::kMatmul;
    n.inputs = {a, b};
    n.shape = {an.shape[0], bn.shape[1]};
    return push(std::move(n));
  }

  NodeId gather(NodeId x, std::vector<int64_t> idx) {
    const Node& xn = node(x);
    require(xn.shape.size() == 2, "gather", "input must be rank 2, got ",
            shape_str(xn.shape));
    for (int64_t i : idx)
      require(i >= -1 && i < xn.shape[0], "gather", "index ", i,
              " out of range for ", xn.shape[0], " rows");
    Node n;
    n.op = Op::kGather;
    n.inputs = {x};
    n.shape = {int64_t(idx.size()), xn.shape[1]};
    n.indices = std::move(idx);
    return push(std::move(n));
  }

  NodeId scatter_add(NodeId x, std::vector<int64_t> idx, int64_t out_rows) {
    const Node& xn = node(x);
    require(xn.shape.size() == 2, "scatter_add", "input must be rank 2, got ",
            shape_str(xn.shape));
    require(int64_t(idx.size()) == xn.shape[0], "scatter_add", "index count ",
            idx.size(), " vs rows ", xn.shape[0]);
    for (int64_t i : idx)
      require(i >= -1 && i < out_rows, "scatter_add", "index ", i,
              " out of range for ", out_rows, " rows");
    Node n;
    n.op = Op::kScatterAdd;
    n.inputs = {x};
    n.shape = {out_rows, xn.shape[1]};
    n.indices = std::move(idx);
    return push(std::move(n));
  }

  NodeId reshape(NodeId x, Shape shape) {
    const Node& xn = node(x);
    require(shape_numel(shape) == shape_numel(xn.shape), "reshape",
            "cannot view ", shape_str(xn.shape), " as ", shape_str(shape));
    Node n;
    n.op = Op::kReshape;
    n.inputs = {x};
    n.shape = std::move(shape);
    return push(std::move(n));
  }

  NodeId concat(const std::vector<NodeId>& xs, int axis) {
    require(!xs.empty(), "concat", "no inputs");
    require(axis == 0 || axis == 1, "concat", "axis must be 0 or 1");
    Shape s = node(xs[0]).shape;
    require(s.size() == 2, "concat", "inputs must be rank 2");
    int64_t total = s[size_t(axis)];
    for (size_t i = 1; i < xs.size(); ++i) {
      const Shape& si = node(xs[i]).shape;
      require(si.size() == 2 && si[size_t(1 - axis)] == s[size_t(1 - axis)],
              "concat", "shape ", shape_str(si), " incompatible with ",
              shape_str(s), " along axis ", axis);
      total += si[size_t(axis)];
    }
    s[size_t(axis)] = total;
    Node n;
    n.op = Op::kConcat;
    n.inputs = xs;
    n.shape = std::move(s);
    n.axis = axis;
    return push(std::move(n));
  }

  // --- reductions and losses --------------------------------------------------

  NodeId sum(NodeId x) {
    Node n;
    n.op = Op::kSum;
    n.inputs = {x};
    n.shape = {1};
    return push(std::move(n));
  }

  NodeId mean(NodeId x) { return scale(sum(x), 1.0 / double(shape_numel(node(x).shape))); }

  NodeId softmax_xent(NodeId logits, std::vector<int64_t> labels) {
    const Node& ln = node(logits);
    require(ln.shape.size() == 2, "softmax_xent", "logits must be rank 2, got ",
            shape_str(ln.shape));
    require(int64_t(labels.size()) == ln.shape[0], "softmax_xent",
            "label count ", labels.size(), " vs rows ", ln.shape[0]);
    for (int64_t l : labels)
      require(l >= 0 && l < ln.shape[1], "softmax_xent", "label ", l,
              " out of range for ", ln.shape[1], " classes");
    Node n;
    n.op = Op::kSoftmaxXent;
    n.inputs = {logits};
    n.shape = {ln.shape[0]};
    n.indices = std::move(labels);
    return push(std::move(n));
  }

  NodeId sigmoid_bce(NodeId logits, NodeId targets) { return binary(Op::kSigmoidBce, logits, targets); }

  NodeId gaussian_kl(NodeId mu, NodeId logvar) { return binary(Op::kGaussianKl, mu, logvar); }

  // --- bookkeeping ------------------------------------------------------------

  void mark_output(const std::string& name, NodeId id) { outputs_[name] = id; }
  const std::map<std::string, NodeId>& outputs() const { return outputs_; }

  const Node& node(NodeId id) const { return nodes_[size_t(id)]; }
  size_t size() const { return nodes_.size(); }
  const std::map<std::string, NodeId>& leaves() const { return leaves_; }

  // --- execution ---------------------------------------------------------------

  EvalResult evaluate(const std::map<std::string, Tensor>& bindings) const {
    EvalResult r;
    r.values.resize(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i) forward(int(i), bindings, r.values);
    return r;
  }

  std::map<std::string, Tensor> evaluate_outputs(
      const std::map<std::string, Tensor>& bindings) const {
    EvalResult r = evaluate(bindings);
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : outputs_) out[name] = r.values[size_t(id)];
    return out;
  }

  // d(loss)/d(param) for each named param; params never touched by the loss
  // get zero tensors. Returns the loss value too since the forward pass is
  // already paid for.
  struct GradResult {
    double loss = 0;
    std::map<std::string, Tensor> grads;
    EvalResult forward;
  };

  GradResult gradient(NodeId loss, const std::set<std::string>& params,
                      const std::map<std::string, Tensor>& bindings) const {
    const Node& ln = node(loss);
    if (shape_numel(ln.shape) != 1)
      fail("gradient: loss node '", ln.name, "' is not scalar, shape ",
           shape_str(ln.shape));
    for (const auto& p : params) {
      auto it = leaves_.find(p);
      if (it == leaves_.end() || !nodes_[size_t(it->second)].is_param)
        fail("gradient: unknown param '", p, "'");
    }

    GradResult res;
    res.forward = evaluate(bindings);

    std::vector<Tensor> adj(nodes_.size());
    std::vector<bool> needed(nodes_.size(), false);
    needed[size_t(loss)] = true;
    // Anything on a path from a requested param to the loss gets an adjoint.
    for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
      if (!needed[size_t(i)]) continue;
      for (NodeId in : nodes_[size_t(i)].inputs) needed[size_t(in)] = true;
    }

    adj[size_t(loss)] = Tensor(ln.shape, 1.0);
    res.loss = res.forward[loss].at(0);

    for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
      if (!needed[size_t(i)] || adj[size_t(i)].numel() == 0) continue;
      backward(i, res.forward.values, adj);
    }

    for (const auto& p : params) {
      NodeId id = leaves_.at(p);
      if (adj[size_t(id)].numel() == 0)
        res.grads[p] = Tensor(nodes_[size_t(id)].shape, 0.0);
      else
        res.grads[p] = std::move(adj[size_t(id)]);
    }
    return res;
  }

 private:
  NodeId leaf(const std::string& name, Shape shape, bool is_param) {
    if (leaves_.count(name)) fail("graph: duplicate leaf name '", name, "'");
    Node n;
    n.op = Op::kLeaf;
    n.shape = std::move(shape);
    n.is_param = is_param;
    NodeId id = push(std::move(n), name);
    leaves_[name] = id;
    return id;
  }

  NodeId unary(Op op, NodeId a) {
    Node n;
    n.op = op;
    n.inputs = {a};
    n.shape = node(a).shape;
    return push(std::move(n));
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    const Node& an = node(a);
    const Node& bn = node(b);
    require(an.shape == bn.shape, op_name(op), "operand shapes differ: ",
            shape_str(an.shape), " vs ", shape_str(bn.shape));
    Node n;
    n.op = op;
    n.inputs = {a, b};
    n.shape = an.shape;
    if (op == Op::kSigmoidBce || op == Op::kGaussianKl) n.shape = an.shape;
    return push(std::move(n));
  }

  NodeId rowwise(Op op, NodeId x, NodeId v) {
    const Node& xn = node(x);
    const Node& vn = node(v);
    require(xn.shape.size() == 2, op_name(op), "input must be rank 2, got ",
            shape_str(xn.shape));
    bool ok = (vn.shape.size() == 1 && vn.shape[0] == xn.shape[1]) ||
              (vn.shape.size() == 2 && vn.shape[0] == 1 && vn.shape[1] == xn.shape[1]);
    require(ok, op_name(op), "row operand ", shape_str(vn.shape),
            " does not broadcast over ", shape_str(xn.shape));
    Node n;
    n.op = op;
    n.inputs = {x, v};
    n.shape = xn.shape;
    return push(std::move(n));
  }

  template <typename... Args>
  void require(bool cond, const char* op, Args&&... args) const {
    if (!cond) fail("graph build: ", op, ": ", detail::concat(std::forward<Args>(args)...));
  }

  NodeId push(Node n, const std::string& label = "") {
    NodeId id = NodeId(nodes_.size());
    n.name = label.empty() ? detail::concat(op_name(n.op), "#", id) : label;
    nodes_.push_back(std::move(n));
    return id;
  }

  void forward(NodeId id, const std::map<std::string, Tensor>& bindings,
               std::vector<Tensor>& vals) const;
  void backward(NodeId id, const std::vector<Tensor>& vals,
                std::vector<Tensor>& adj) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> leaves_;
  std::map<std::string, NodeId> outputs_;
};

// ---------------------------------------------------------------------------

inline void Graph::forward(NodeId id, const std::map<std::string, Tensor>& bindings,
                           std::vector<Tensor>& vals) const {
  const Node& n = nodes_[size_t(id)];
  Tensor& out = vals[size_t(id)];
  auto in = [&](size_t k) -> const Tensor& { return vals[size_t(n.inputs[k])]; };

  switch (n.op) {
    case Op::kConst:
      out = n.value;
      break;
    case Op::kLeaf: {
      auto it = bindings.find(n.name);
      if (it == bindings.end()) fail("evaluate: unbound leaf '", n.name, "'");
      if (it->second.shape() != n.shape)
        fail("evaluate: leaf '", n.name, "' bound with shape ",
             shape_str(it->second.shape()), ", declared ", shape_str(n.shape));
      out = it->second;
      break;
    }
    case Op::kAdd: {
      out = in(0);
      const Tensor& b = in(1);
      for (int64_t i = 0; i < out.numel(); ++i) out.at(i) += b.at(i);
      break;
    }
    case Op::kSub: {
      out = in(0);
      const Tensor& b = in(1);
      for (int64_t i = 0; i < out.numel(); ++i) out.at(i) -= b.at(i);
      break;
    }
    case Op::kMul: {
      out = in(0);
      const Tensor& b = in(1);
      for (int64_t i = 0; i < out.numel(); ++i) out.at(i) *= b.at(i);
      break;
    }
    case Op::kScale: {
      out = in(0);
      for (int64_t i = 0; i < out.numel(); ++i) out.at(i) *= n.scalar;
      break;
    }
    case Op::kAddBias: {
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      out = x;
      int64_t rows = x.dim(0), cols = x.dim(1);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out.at(r, c) += b.at(c);
      break;
    }
    case Op::kMulRow: {
      const Tensor& x = in(0);
      const Tensor& v = in(1);
      out = x;
      int64_t rows = x.dim(0), cols = x.dim(1);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out.at(r, c) *= v.at(c);
      break;
    }
    case Op::kRowScale: {
      const Tensor& x = in(0);
      out = x;
      int64_t rows = x.dim(0), cols = x.dim(1);
      for (int64_t r = 0; r < rows; ++r) {
        double w = n.row_weights[size_t(r)];
        for (int64_t c = 0; c < cols; ++c) out.at(r, c) *= w;
      }
      break;
    }
    case Op::kMatmul:
      out = Tensor(n.shape);
      matmul_into(in(0), in(1), out);
      break;
    case Op::kGather: {
      const Tensor& x = in(0);
      int64_t cols = x.dim(1);
      out = Tensor(n.shape);
      for (size_t r = 0; r < n.indices.size(); ++r) {
        int64_t src = n.indices[r];
        if (src < 0) continue;  // zero row
        std::memcpy(out.data() + int64_t(r) * cols, x.data() + src * cols,
                    size_t(cols) * sizeof(double));
      }
      break;
    }
    case Op::kScatterAdd: {
      const Tensor& x = in(0);
      int64_t cols = x.dim(1);
      out = Tensor(n.shape);
      for (size_t r = 0; r < n.indices.size(); ++r) {
        int64_t dst = n.indices[r];
        if (dst < 0) continue;
        const double* src = x.data() + int64_t(r) * cols;
        double* d = out.data() + dst * cols;
        for (int64_t c = 0; c < cols; ++c) d[c] += src[c];
      }
      break;
    }
    case Op::kReshape:
      out = in(0).reshaped(n.shape);
      break;
    case Op::kConcat: {
      out = Tensor(n.shape);
      if (n.axis == 0) {
        int64_t row = 0;
        int64_t cols = n.shape.size() == 2 ? n.shape[1] : 1;
        for (NodeId src : n.inputs) {
          const Tensor& t = vals[size_t(src)];
          std::memcpy(out.data() + row * cols, t.data(),
                      size_t(t.numel()) * sizeof(double));
          row += t.dim(0);
        }
      } else {
        int64_t rows = n.shape[0], cols = n.shape[1];
        int64_t off = 0;
        for (NodeId src : n.inputs) {
          const Tensor& t = vals[size_t(src)];
          int64_t tc = t.dim(1);
          for (int64_t r = 0; r < rows; ++r)
            std::memcpy(out.data() + r * cols + off, t.data() + r * tc,
                        size_t(tc) * sizeof(double));
          off += tc;
        }
      }
      break;
    }
    case Op::kExp: {
      const Tensor& x = in(0);
      out = Tensor(n.shape);
      for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = std::exp(x.at(i));
      break;
    }
    case Op::kLog: {
      const Tensor& x = in(0);
      out = Tensor(n.shape);
      for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = std::log(x.at(i));
      break;
    }
    case Op::kTanh: {
      const Tensor& x = in(0);
      out = Tensor(n.shape);
      for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = std::tanh(x.at(i));
      break;
    }
    case Op::kSum: {
      const Tensor& x = in(0);
      double acc = 0;
      for (int64_t i = 0; i < x.numel(); ++i) acc += x.at(i);
      out = Tensor::scalar(acc);
      break;
    }
    case Op::kSoftmaxXent: {
      const Tensor& logits = in(0);
      int64_t rows = logits.dim(0), cols = logits.dim(1);
      out = Tensor(n.shape);
      for (int64_t r = 0; r < rows; ++r) {
        double mx = logits.at(r, 0);
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, logits.at(r, c));
        double lse = 0;
        for (int64_t c = 0; c < cols; ++c) lse += std::exp(logits.at(r, c) - mx);
        lse = std::log(lse) + mx;
        out.at(r) = lse - logits.at(r, n.indices[size_t(r)]);
      }
      break;
    }
    case Op::kSigmoidBce: {
      const Tensor& x = in(0);
      const Tensor& y = in(1);
      out = Tensor(n.shape);
      for (int64_t i = 0; i < x.numel(); ++i) {
        double xi = x.at(i), yi = y.at(i);
        out.at(i) = std::max(xi, 0.0) - xi * yi + std::log1p(std::exp(-std::fabs(xi)));
      }
      break;
    }
    case Op::kGaussianKl: {
      const Tensor& mu = in(0);
      const Tensor& lv = in(1);
      out = Tensor(n.shape);
      for (int64_t i = 0; i < mu.numel(); ++i) {
        double m = mu.at(i), l = lv.at(i);
        out.at(i) = 0.5 * (m * m + std::exp(l) - 1.0 - l);
      }
      break;
    }
  }

  if (!out.all_finite())
    fail("evaluate: non-finite value produced by op '", n.name, "'");
}

inline void Graph::backward(NodeId id, const std::vector<Tensor>& vals,
                            std::vector<Tensor>& adj) const {
  const Node& n = nodes_[size_t(id)];
  const Tensor& g = adj[size_t(id)];
  auto in_val = [&](size_t k) -> const Tensor& { return vals[size_t(n.inputs[k])]; };
  auto to = [&](size_t k) -> Tensor& { return adj[size_t(n.inputs[k])]; };
  auto in_shape = [&](size_t k) -> const Shape& { return nodes_[size_t(n.inputs[k])].shape; };
  auto ensure = [&](size_t k) -> Tensor& {
    Tensor& slot = to(k);
    if (slot.numel() == 0) slot = Tensor(in_shape(k), 0.0);
    return slot;
  };

  switch (n.op) {
    case Op::kConst:
    case Op::kLeaf:
      break;
    case Op::kAdd: {
      Tensor& da = ensure(0);
      Tensor& db = ensure(1);
      for (int64_t i = 0; i < g.numel(); ++i) {
        da.at(i) += g.at(i);
        db.at(i) += g.at(i);
      }
      break;
    }
    case Op::kSub: {
      Tensor& da = ensure(0);
      Tensor& db = ensure(1);
      for (int64_t i = 0; i < g.numel(); ++i) {
        da.at(i) += g.at(i);
        db.at(i) -= g.at(i);
      }
      break;
    }
    case Op::kMul: {
      Tensor& da = ensure(0);
      Tensor& db = ensure(1);
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      for (int64_t i = 0; i < g.numel(); ++i) {
        da.at(i) += g.at(i) * b.at(i);
        db.at(i) += g.at(i) * a.at(i);
      }
      break;
    }
    case Op::kScale: {
      Tensor& da = ensure(0);
      for (int64_t i = 0; i < g.numel(); ++i) da.at(i) += g.at(i) * n.scalar;
      break;
    }
    case Op::kAddBias: {
      Tensor& dx = ensure(0);
      Tensor& db = ensure(1);
      int64_t rows = n.shape[0], cols = n.shape[1];
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
          dx.at(r, c) += g.at(r, c);
          db.at(c) += g.at(r, c);
        }
      break;
    }
    case Op::kMulRow: {
      Tensor& dx = ensure(0);
      Tensor& dv = ensure(1);
      const Tensor& x = in_val(0);
      const Tensor& v = in_val(1);
      int64_t rows = n.shape[0], cols = n.shape[1];
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
          dx.at(r, c) += g.at(r, c) * v.at(c);
          dv.at(c) += g.at(r, c) * x.at(r, c);
        }
      break;
    }
    case Op::kRowScale: {
      Tensor& dx = ensure(0);
      int64_t rows = n.shape[0], cols = n.shape[1];
      for (int64_t r = 0; r < rows; ++r) {
        double w = n.row_weights[size_t(r)];
        for (int64_t c = 0; c < cols; ++c) dx.at(r, c) += g.at(r, c) * w;
      }
      break;
    }
    case Op::kMatmul: {
      Tensor& da = ensure(0);
      Tensor& db = ensure(1);
      matmul_a_bt_into(g, in_val(1), da, /*accumulate=*/true);
      matmul_at_b_into(in_val(0), g, db, /*accumulate=*/true);
      break;
    }
    case Op::kGather: {
      Tensor& dx = ensure(0);
      int64_t cols = n.shape[1];
      for (size_t r = 0; r < n.indices.size(); ++r) {
        int64_t src = n.indices[r];
        if (src < 0) continue;
        const double* gr = g.data() + int64_t(r) * cols;
        double* d = dx.data() + src * cols;
        for (int64_t c = 0; c < cols; ++c) d[c] += gr[c];
      }
      break;
    }
    case Op::kScatterAdd: {
      Tensor& dx = ensure(0);
      int64_t cols = n.shape[1];
      for (size_t r = 0; r < n.indices.size(); ++r) {
        int64_t dst = n.indices[r];
        if (dst < 0) continue;
        const double* gr = g.data() + dst * cols;
        double* d = dx.data() + int64_t(r) * cols;
        for (int64_t c = 0; c < cols; ++c) d[c] += gr[c];
      }
      break;
    }
    case Op::kReshape: {
      Tensor& dx = ensure(0);
      for (int64_t i = 0; i < g.numel(); ++i) dx.at(i) += g.at(i);
      break;
    }
    case Op::kConcat: {
      if (n.axis == 0) {
        int64_t cols = n.shape.size() == 2 ? n.shape[1] : 1;
        int64_t row = 0;
        for (size_t k = 0; k < n.inputs.size(); ++k) {
          Tensor& dk = ensure(k);
          int64_t rk = in_shape(k)[0];
          for (int64_t i = 0; i < rk * cols; ++i) dk.at(i) += g.at(row * cols + i);
          row += rk;
        }
      } else {
        int64_t rows = n.shape[0], cols = n.shape[1];
        int64_t off = 0;
        for (size_t k = 0; k < n.inputs.size(); ++k) {
          Tensor& dk = ensure(k);
          int64_t ck = in_shape(k)[1];
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < ck; ++c) dk.at(r, c) += g.at(r * cols + off + c);
          off += ck;
        }
      }
      break;
    }
    case Op::kExp: {
      Tensor& dx = ensure(0);
      const Tensor& y = vals[size_t(id)];
      for (int64_t i = 0; i < g.numel(); ++i) dx.at(i) += g.at(i) * y.at(i);
      break;
    }
    case Op::kLog: {
      Tensor& dx = ensure(0);
      const Tensor& x = in_val(0);
      for (int64_t i = 0; i < g.numel(); ++i) dx.at(i) += g.at(i) / x.at(i);
      break;
    }
    case Op::kTanh: {
      Tensor& dx = ensure(0);
      const Tensor& y = vals[size_t(id)];
      for (int64_t i = 0; i < g.numel(); ++i)
        dx.at(i) += g.at(i) * (1.0 - y.at(i) * y.at(i));
      break;
    }
    case Op::kSum: {
      Tensor& dx = ensure(0);
      double gv = g.at(0);
      for (int64_t i = 0; i < dx.numel(); ++i) dx.at(i) += gv;
      break;
    }
    case Op::kSoftmaxXent: {
      Tensor& dl = ensure(0);
      const Tensor& logits = in_val(0);
      int64_t rows = logits.dim(0), cols = logits.dim(1);
      for (int64_t r = 0; r < rows; ++r) {
        double mx = logits.at(r, 0);
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, logits.at(r, c));
        double z = 0;
        for (int64_t c = 0; c < cols; ++c) z += std::exp(logits.at(r, c) - mx);
        double gr = g.at(r);
        for (int64_t c = 0; c < cols; ++c) {
          double p = std::exp(logits.at(r, c) - mx) / z;
          dl.at(r, c) += gr * (p - (c == n.indices[size_t(r)] ? 1.0 : 0.0));
        }
      }
      break;
    }
    case Op::kSigmoidBce: {
      Tensor& dx = ensure(0);
      Tensor& dy = ensure(1);
      const Tensor& x = in_val(0);
      const Tensor& y = in_val(1);
      for (int64_t i = 0; i < g.numel(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-x.at(i)));
        dx.at(i) += g.at(i) * (s - y.at(i));
        dy.at(i) += g.at(i) * (-x.at(i));
      }
      break;
    }
    case Op::kGaussianKl: {
      Tensor& dmu = ensure(0);
      Tensor& dlv = ensure(1);
      const Tensor& mu = in_val(0);
      const Tensor& lv = in_val(1);
      for (int64_t i = 0; i < g.numel(); ++i) {
        dmu.at(i) += g.at(i) * mu.at(i);
        dlv.at(i) += g.at(i) * 0.5 * (std::exp(lv.at(i)) - 1.0);
      }
      break;
    }
  }
}

// Free-function views matching the rest of the library's call style.
inline std::map<std::string, Tensor> evaluate(const Graph& g,
                                              const std::map<std::string, Tensor>& inputs) {
  return g.evaluate_outputs(inputs);
}

inline std::map<std::string, Tensor> gradient(const Graph& g, NodeId loss,
                                              const std::set<std::string>& params,
                                              const std::map<std::string, Tensor>& inputs) {
  return g.gradient(loss, params, inputs).grads;
}

}  // namespace octlat::ad
