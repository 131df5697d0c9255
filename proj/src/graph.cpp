#include "vqclone/graph.hpp"

#include <algorithm>
#include <cmath>

namespace vqclone::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kGatherRows: return "gather_rows";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kAddRow: return "add_row";
    case Op::kAddScalar: return "add_scalar";
    case Op::kScale: return "scale";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kConcatRows: return "concat_rows";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceRows: return "slice_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSumAll: return "sum_all";
    case Op::kMae: return "mae";
    case Op::kMse: return "mse";
    case Op::kCrossEntropy: return "cross_entropy";
    case Op::kStopGrad: return "stop_gradient";
    case Op::kStraightThrough: return "straight_through";
  }
  return "?";
}

namespace {

// out += a * b, all row-major.
void matmul_plain(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  out.fill(0.0);
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      const double* brow = bp + p * n;
      double* orow = op + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// ga += g * b^T  (g: m x n, b: k x n, ga: m x k)
void acc_g_bt(const Tensor& g, const Tensor& b, Tensor& ga) {
  const std::size_t m = g.rows(), n = g.cols(), k = b.rows();
  const double* gp = g.data();
  const double* bp = b.data();
  double* out = ga.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* grow = gp + i * n;
      const double* brow = bp + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out[i * k + p] += acc;
    }
  }
}

// gb += a^T * g  (a: m x k, g: m x n, gb: k x n)
void acc_at_g(const Tensor& a, const Tensor& g, Tensor& gb) {
  const std::size_t m = a.rows(), k = a.cols(), n = g.cols();
  const double* ap = a.data();
  const double* gp = g.data();
  double* out = gb.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      const double* grow = gp + i * n;
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace

const Graph::Node& Graph::node(Value v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ShapeError("Graph: invalid value handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Graph::Node& Graph::node(Value v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ShapeError("Graph: invalid value handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

int Graph::push(Node n) {
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  compute(nodes_.back());
  check_finite(nodes_.back(), id);
  affected_cache_.clear();
  backward_done_ = false;
  return id;
}

Value Graph::input(Tensor t) {
  Node n;
  n.op = Op::kInput;
  n.val = std::move(t);
  return Value{push(std::move(n))};
}

Value Graph::param(const std::string& name, const Tensor& t) {
  auto it = param_index_.find(name);
  if (it != param_index_.end()) {
    if (!nodes_[static_cast<std::size_t>(it->second)].val.same_shape(t))
      throw ShapeError("param '" + name + "' re-registered with new shape");
    return Value{it->second};
  }
  Node n;
  n.op = Op::kParam;
  n.name = name;
  n.val = t;
  int id = push(std::move(n));
  param_index_[name] = id;
  param_list_.emplace_back(name, Value{id});
  return Value{id};
}

bool Graph::has_param(const std::string& name) const {
  return param_index_.count(name) > 0;
}

Value Graph::make(Op op, int a, int b) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  return Value{push(std::move(n))};
}

Value Graph::gather_rows(Value a, std::vector<std::size_t> idx) {
  const Tensor& av = value(a);
  for (std::size_t i : idx)
    if (i >= av.rows()) throw ShapeError("gather_rows: index out of range");
  Node n;
  n.op = Op::kGatherRows;
  n.a = a.id;
  n.idx = std::move(idx);
  return Value{push(std::move(n))};
}

Value Graph::matmul(Value a, Value b) {
  if (value(a).cols() != value(b).rows())
    throw ShapeError("matmul: inner dimensions differ (" +
                     value(a).shape_str() + " vs " + value(b).shape_str() + ")");
  return make(Op::kMatMul, a.id, b.id);
}

Value Graph::add(Value a, Value b) {
  if (!value(a).same_shape(value(b))) throw ShapeError("add: shape mismatch");
  return make(Op::kAdd, a.id, b.id);
}

Value Graph::sub(Value a, Value b) {
  if (!value(a).same_shape(value(b))) throw ShapeError("sub: shape mismatch");
  return make(Op::kSub, a.id, b.id);
}

Value Graph::mul(Value a, Value b) {
  if (!value(a).same_shape(value(b))) throw ShapeError("mul: shape mismatch");
  return make(Op::kMul, a.id, b.id);
}

Value Graph::add_row(Value a, Value r) {
  if (value(r).rows() != 1 || value(r).cols() != value(a).cols())
    throw ShapeError("add_row: row vector shape mismatch");
  return make(Op::kAddRow, a.id, r.id);
}

Value Graph::add_scalar(Value a, double c) {
  Node n;
  n.op = Op::kAddScalar;
  n.a = a.id;
  n.c = c;
  return Value{push(std::move(n))};
}

Value Graph::scale(Value a, double c) {
  Node n;
  n.op = Op::kScale;
  n.a = a.id;
  n.c = c;
  return Value{push(std::move(n))};
}

Value Graph::tanh(Value a) { return make(Op::kTanh, a.id, -1); }
Value Graph::relu(Value a) { return make(Op::kRelu, a.id, -1); }
Value Graph::exp(Value a) { return make(Op::kExp, a.id, -1); }

Value Graph::softmax_rows(Value a) {
  if (value(a).cols() == 0) throw ShapeError("softmax_rows: zero columns");
  return make(Op::kSoftmaxRows, a.id, -1);
}

Value Graph::concat_rows(Value a, Value b) {
  if (value(a).cols() != value(b).cols())
    throw ShapeError("concat_rows: column count mismatch");
  return make(Op::kConcatRows, a.id, b.id);
}

Value Graph::concat_cols(Value a, Value b) {
  if (value(a).rows() != value(b).rows())
    throw ShapeError("concat_cols: row count mismatch");
  return make(Op::kConcatCols, a.id, b.id);
}

Value Graph::slice_rows(Value a, std::size_t r0, std::size_t r1) {
  if (r0 > r1 || r1 > value(a).rows()) throw ShapeError("slice_rows: bad range");
  Node n;
  n.op = Op::kSliceRows;
  n.a = a.id;
  n.c0 = r0;
  n.c1 = r1;
  return Value{push(std::move(n))};
}

Value Graph::slice_cols(Value a, std::size_t c0, std::size_t c1) {
  if (c0 > c1 || c1 > value(a).cols()) throw ShapeError("slice_cols: bad range");
  Node n;
  n.op = Op::kSliceCols;
  n.a = a.id;
  n.c0 = c0;
  n.c1 = c1;
  return Value{push(std::move(n))};
}

Value Graph::sum_all(Value a) { return make(Op::kSumAll, a.id, -1); }

Value Graph::mae(Value a, Value b) {
  if (!value(a).same_shape(value(b))) throw ShapeError("mae: shape mismatch");
  if (value(a).size() == 0) throw ShapeError("mae: empty input");
  return make(Op::kMae, a.id, b.id);
}

Value Graph::mse(Value a, Value b) {
  if (!value(a).same_shape(value(b))) throw ShapeError("mse: shape mismatch");
  if (value(a).size() == 0) throw ShapeError("mse: empty input");
  return make(Op::kMse, a.id, b.id);
}

Value Graph::cross_entropy(Value probs, std::vector<std::size_t> targets) {
  const Tensor& p = value(probs);
  if (p.rows() == 0) throw ShapeError("cross_entropy: empty input");
  if (targets.size() != p.rows())
    throw ShapeError("cross_entropy: one target per row required");
  for (std::size_t t : targets)
    if (t >= p.cols()) throw ShapeError("cross_entropy: target out of range");
  Node n;
  n.op = Op::kCrossEntropy;
  n.a = probs.id;
  n.idx = std::move(targets);
  return Value{push(std::move(n))};
}

Value Graph::stop_gradient(Value a) { return make(Op::kStopGrad, a.id, -1); }

Value Graph::straight_through(Value z, Value q) {
  if (!value(z).same_shape(value(q)))
    throw ShapeError("straight_through: z and q shapes differ");
  return make(Op::kStraightThrough, z.id, q.id);
}

void Graph::compute(Node& n) {
  const Tensor* a = n.a >= 0 ? &nodes_[static_cast<std::size_t>(n.a)].val : nullptr;
  const Tensor* b = n.b >= 0 ? &nodes_[static_cast<std::size_t>(n.b)].val : nullptr;
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      break;
    case Op::kGatherRows: {
      const std::size_t c = a->cols();
      if (!n.val.same_shape(Tensor(n.idx.size(), c))) n.val = Tensor(n.idx.size(), c);
      for (std::size_t t = 0; t < n.idx.size(); ++t)
        std::copy_n(a->data() + n.idx[t] * c, c, n.val.data() + t * c);
      break;
    }
    case Op::kMatMul: {
      if (n.val.rows() != a->rows() || n.val.cols() != b->cols())
        n.val = Tensor(a->rows(), b->cols());
      matmul_plain(*a, *b, n.val);
      break;
    }
    case Op::kAdd: {
      n.val = *a;
      for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] += (*b)[i];
      break;
    }
    case Op::kSub: {
      n.val = *a;
      for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] -= (*b)[i];
      break;
    }
    case Op::kMul: {
      n.val = *a;
      for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] *= (*b)[i];
      break;
    }
    case Op::kAddRow: {
      n.val = *a;
      const std::size_t c = a->cols();
      for (std::size_t r = 0; r < n.val.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) n.val.at(r, j) += (*b)[j];
      break;
    }
    case Op::kAddScalar: {
      n.val = *a;
      for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] += n.c;
      break;
    }
    case Op::kScale: {
      n.val = *a;
      for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] *= n.c;
      break;
    }
    case Op::kTanh: {
      n.val = *a;
      for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::tanh(n.val[i]);
      break;
    }
    case Op::kRelu: {
      n.val = *a;
      for (std::size_t i = 0; i < n.val.size(); ++i)
        n.val[i] = n.val[i] > 0.0 ? n.val[i] : 0.0;
      break;
    }
    case Op::kExp: {
      n.val = *a;
      for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::exp(n.val[i]);
      break;
    }
    case Op::kSoftmaxRows: {
      n.val = *a;
      const std::size_t c = a->cols();
      for (std::size_t r = 0; r < n.val.rows(); ++r) {
        double* row = n.val.data() + r * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
      }
      break;
    }
    case Op::kConcatRows: {
      if (n.val.rows() != a->rows() + b->rows() || n.val.cols() != a->cols())
        n.val = Tensor(a->rows() + b->rows(), a->cols());
      std::copy_n(a->data(), a->size(), n.val.data());
      std::copy_n(b->data(), b->size(), n.val.data() + a->size());
      break;
    }
    case Op::kConcatCols: {
      const std::size_t r = a->rows(), ca = a->cols(), cb = b->cols();
      if (n.val.rows() != r || n.val.cols() != ca + cb) n.val = Tensor(r, ca + cb);
      for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(a->data() + i * ca, ca, n.val.data() + i * (ca + cb));
        std::copy_n(b->data() + i * cb, cb, n.val.data() + i * (ca + cb) + ca);
      }
      break;
    }
    case Op::kSliceRows: {
      const std::size_t c = a->cols(), m = n.c1 - n.c0;
      if (n.val.rows() != m || n.val.cols() != c) n.val = Tensor(m, c);
      std::copy_n(a->data() + n.c0 * c, m * c, n.val.data());
      break;
    }
    case Op::kSliceCols: {
      const std::size_t r = a->rows(), w = n.c1 - n.c0;
      if (n.val.rows() != r || n.val.cols() != w) n.val = Tensor(r, w);
      for (std::size_t i = 0; i < r; ++i)
        std::copy_n(a->data() + i * a->cols() + n.c0, w, n.val.data() + i * w);
      break;
    }
    case Op::kSumAll: {
      double s = 0.0;
      for (std::size_t i = 0; i < a->size(); ++i) s += (*a)[i];
      n.val = Tensor::scalar(s);
      break;
    }
    case Op::kMae: {
      double s = 0.0;
      for (std::size_t i = 0; i < a->size(); ++i) s += std::fabs((*a)[i] - (*b)[i]);
      n.val = Tensor::scalar(s / static_cast<double>(a->size()));
      break;
    }
    case Op::kMse: {
      double s = 0.0;
      for (std::size_t i = 0; i < a->size(); ++i) {
        double d = (*a)[i] - (*b)[i];
        s += d * d;
      }
      n.val = Tensor::scalar(s / static_cast<double>(a->size()));
      break;
    }
    case Op::kCrossEntropy: {
      double s = 0.0;
      for (std::size_t t = 0; t < n.idx.size(); ++t)
        s -= std::log(a->at(t, n.idx[t]));
      n.val = Tensor::scalar(s / static_cast<double>(n.idx.size()));
      break;
    }
    case Op::kStopGrad: {
      n.val = *a;
      break;
    }
    case Op::kStraightThrough: {
      if (!n.pinned) {
        // First evaluation: forward is q, remember the offset for refresh.
        n.val = *b;
        n.pin = *b;
        for (std::size_t i = 0; i < n.pin.size(); ++i) n.pin[i] -= (*a)[i];
        n.pinned = true;
      } else {
        n.val = *a;
        for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] += n.pin[i];
      }
      break;
    }
  }
}

void Graph::check_finite(const Node& n, int id) const {
  if (!n.val.all_finite())
    throw NumericError("non-finite value at node #" + std::to_string(id) +
                       " (" + op_name(n.op) +
                       (n.name.empty() ? "" : " '" + n.name + "'") + ")");
}

const Tensor& Graph::value(Value v) const { return node(v).val; }

double Graph::scalar(Value v) const {
  const Tensor& t = node(v).val;
  if (t.rows() != 1 || t.cols() != 1)
    throw ShapeError("scalar: value is " + t.shape_str() + ", not 1x1");
  return t[0];
}

void Graph::backward(Value loss) {
  Node& ln = node(loss);
  if (ln.val.rows() != 1 || ln.val.cols() != 1)
    throw ShapeError("backward: loss must be scalar, got " + ln.val.shape_str());
  for (Node& n : nodes_) {
    if (!n.grd.same_shape(n.val)) n.grd = Tensor(n.val.rows(), n.val.cols());
    n.grd.fill(0.0);
    n.has_grad = true;
  }
  ln.grd[0] = 1.0;

  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    Tensor& g = n.grd;
    Tensor* ga = n.a >= 0 ? &nodes_[static_cast<std::size_t>(n.a)].grd : nullptr;
    Tensor* gb = n.b >= 0 ? &nodes_[static_cast<std::size_t>(n.b)].grd : nullptr;
    const Tensor* av = n.a >= 0 ? &nodes_[static_cast<std::size_t>(n.a)].val : nullptr;
    const Tensor* bv = n.b >= 0 ? &nodes_[static_cast<std::size_t>(n.b)].val : nullptr;
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kGatherRows: {
        const std::size_t c = ga->cols();
        for (std::size_t t = 0; t < n.idx.size(); ++t)
          for (std::size_t j = 0; j < c; ++j)
            ga->at(n.idx[t], j) += g.at(t, j);
        break;
      }
      case Op::kMatMul:
        acc_g_bt(g, *bv, *ga);
        acc_at_g(*av, g, *gb);
        break;
      case Op::kAdd:
        for (std::size_t i2 = 0; i2 < g.size(); ++i2) {
          (*ga)[i2] += g[i2];
          (*gb)[i2] += g[i2];
        }
        break;
      case Op::kSub:
        for (std::size_t i2 = 0; i2 < g.size(); ++i2) {
          (*ga)[i2] += g[i2];
          (*gb)[i2] -= g[i2];
        }
        break;
      case Op::kMul:
        for (std::size_t i2 = 0; i2 < g.size(); ++i2) {
          (*ga)[i2] += g[i2] * (*bv)[i2];
          (*gb)[i2] += g[i2] * (*av)[i2];
        }
        break;
      case Op::kAddRow: {
        const std::size_t c = g.cols();
        for (std::size_t i2 = 0; i2 < g.size(); ++i2) (*ga)[i2] += g[i2];
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g.at(r, j);
        break;
      }
      case Op::kAddScalar:
        for (std::size_t i2 = 0; i2 < g.size(); ++i2) (*ga)[i2] += g[i2];
        break;
      case Op::kScale:
        for (std::size_t i2 = 0; i2 < g.size(); ++i2) (*ga)[i2] += n.c * g[i2];
        break;
      case Op::kTanh:
        for (std::size_t i2 = 0; i2 < g.size(); ++i2)
          (*ga)[i2] += g[i2] * (1.0 - n.val[i2] * n.val[i2]);
        break;
      case Op::kRelu:
        for (std::size_t i2 = 0; i2 < g.size(); ++i2)
          if ((*av)[i2] > 0.0) (*ga)[i2] += g[i2];
        break;
      case Op::kExp:
        for (std::size_t i2 = 0; i2 < g.size(); ++i2) (*ga)[i2] += g[i2] * n.val[i2];
        break;
      case Op::kSoftmaxRows: {
        const std::size_t c = g.cols();
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double* y = n.val.data() + r * c;
          const double* gr = g.data() + r * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += gr[j] * y[j];
          double* out = ga->data() + r * c;
          for (std::size_t j = 0; j < c; ++j) out[j] += y[j] * (gr[j] - dot);
        }
        break;
      }
      case Op::kConcatRows: {
        for (std::size_t i2 = 0; i2 < ga->size(); ++i2) (*ga)[i2] += g[i2];
        for (std::size_t i2 = 0; i2 < gb->size(); ++i2)
          (*gb)[i2] += g[ga->size() + i2];
        break;
      }
      case Op::kConcatCols: {
        const std::size_t ca = ga->cols(), cb = gb->cols();
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t j = 0; j < ca; ++j) ga->at(r, j) += g.at(r, j);
          for (std::size_t j = 0; j < cb; ++j) gb->at(r, j) += g.at(r, ca + j);
        }
        break;
      }
      case Op::kSliceRows: {
        const std::size_t c = g.cols();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) ga->at(n.c0 + r, j) += g.at(r, j);
        break;
      }
      case Op::kSliceCols: {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < g.cols(); ++j)
            ga->at(r, n.c0 + j) += g.at(r, j);
        break;
      }
      case Op::kSumAll: {
        const double g0 = g[0];
        for (std::size_t i2 = 0; i2 < ga->size(); ++i2) (*ga)[i2] += g0;
        break;
      }
      case Op::kMae: {
        const double s = g[0] / static_cast<double>(av->size());
        for (std::size_t i2 = 0; i2 < av->size(); ++i2) {
          double d = (*av)[i2] - (*bv)[i2];
          double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
          (*ga)[i2] += s * sgn;
          (*gb)[i2] -= s * sgn;
        }
        break;
      }
      case Op::kMse: {
        const double s = 2.0 * g[0] / static_cast<double>(av->size());
        for (std::size_t i2 = 0; i2 < av->size(); ++i2) {
          double d = (*av)[i2] - (*bv)[i2];
          (*ga)[i2] += s * d;
          (*gb)[i2] -= s * d;
        }
        break;
      }
      case Op::kCrossEntropy: {
        const double g0 = g[0] / static_cast<double>(n.idx.size());
        for (std::size_t t = 0; t < n.idx.size(); ++t)
          ga->at(t, n.idx[t]) -= g0 / av->at(t, n.idx[t]);
        break;
      }
      case Op::kStopGrad:
        break;  // severed
      case Op::kStraightThrough:
        // Gradient is copied to z; q receives nothing.
        for (std::size_t i2 = 0; i2 < g.size(); ++i2) (*ga)[i2] += g[i2];
        break;
    }
  }
  backward_done_ = true;
}

const Tensor& Graph::grad(Value v) const {
  const Node& n = node(v);
  if (!backward_done_ || !n.has_grad)
    throw StateError("grad: backward has not been run");
  return n.grd;
}

const Tensor& Graph::grad(const std::string& param_name) const {
  auto it = param_index_.find(param_name);
  if (it == param_index_.end())
    throw StateError("grad: unknown parameter '" + param_name + "'");
  return grad(Value{it->second});
}

std::map<std::string, Tensor> Graph::param_grads() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : param_list_) out[name] = grad(v);
  return out;
}

double Graph::leaf_component(Value leaf, std::size_t i) const {
  const Node& n = node(leaf);
  if (n.op != Op::kInput && n.op != Op::kParam)
    throw StateError("leaf_component: node is not a leaf");
  return n.val[i];
}

void Graph::set_leaf_component(Value leaf, std::size_t i, double v) {
  Node& n = node(leaf);
  if (n.op != Op::kInput && n.op != Op::kParam)
    throw StateError("set_leaf_component: node is not a leaf");
  n.val[i] = v;
}

const std::vector<char>& Graph::affected_mask(int leaf) {
  auto it = affected_cache_.find(leaf);
  if (it != affected_cache_.end()) return it->second;
  std::vector<char> mask(nodes_.size(), 0);
  mask[static_cast<std::size_t>(leaf)] = 1;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::kInput || n.op == Op::kParam || n.op == Op::kStopGrad)
      continue;  // stop_gradient output is pinned, nothing flows past it
    bool aff = n.a >= 0 && mask[static_cast<std::size_t>(n.a)];
    // straight_through re-evaluates from z only; the q branch is pinned.
    if (n.op != Op::kStraightThrough)
      aff = aff || (n.b >= 0 && mask[static_cast<std::size_t>(n.b)]);
    if (aff) mask[i] = 1;
  }
  return affected_cache_.emplace(leaf, std::move(mask)).first->second;
}

void Graph::refresh(Value changed_leaf) {
  const std::vector<char>& mask = affected_mask(changed_leaf.id);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!mask[i] || n.op == Op::kInput || n.op == Op::kParam) continue;
    compute(n);
    check_finite(n, static_cast<int>(i));
  }
}

void Graph::refresh_all() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::kInput || n.op == Op::kParam || n.op == Op::kStopGrad)
      continue;
    compute(n);
    check_finite(n, static_cast<int>(i));
  }
}

}  // namespace vqclone::ad
