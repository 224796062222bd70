#include "milens/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "blas.hpp"
#include "milens/error.hpp"

namespace milens {

namespace {

// SAME padding for a given input extent: output = ceil(in / stride),
// total padding distributed with the extra cell at the end.
struct SamePad {
  int64_t out, lo;
};

SamePad same_pad(int64_t in, int64_t kernel, int64_t stride) {
  const int64_t out = (in + stride - 1) / stride;
  const int64_t total = std::max<int64_t>(0, (out - 1) * stride + kernel - in);
  return {out, total / 2};
}

}  // namespace

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kFrozen: return "frozen";
    case Op::kMatmul: return "matmul";
    case Op::kMatmulNT: return "matmul_nt";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kBiasAdd: return "bias_add";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kAbs: return "abs";
    case Op::kLogsumexpRows: return "logsumexp_rows";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSliceCols: return "slice_cols";
    case Op::kConcatCols: return "concat_cols";
    case Op::kRepeatRows: return "repeat_rows";
    case Op::kTileRows: return "tile_rows";
    case Op::kTakeDiag: return "take_diag";
    case Op::kMeanOffdiagExp: return "mean_offdiag_exp";
    case Op::kContrastRows: return "contrast_rows";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kLayerNormNCHW: return "layer_norm_nchw";
    case Op::kConv2d: return "conv2d";
    case Op::kAvgPoolHW: return "avg_pool_hw";
    case Op::kSoftmaxXent: return "softmax_cross_entropy";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

NodeId Tape::push(Node&& n) {
  if (n.store.size() > 0 && n.vptr == nullptr) n.vptr = n.store.data();
  if (n.len == 0) n.len = numel(n.shape);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_finite(NodeId id, const char* opname) {
  const Node& n = node(id);
  for (int64_t i = 0; i < n.len; ++i) {
    if (!std::isfinite(n.vptr[i]))
      throw NumericError(std::string(opname) + ": non-finite output at flat index " +
                         std::to_string(i) + " (value " + std::to_string(n.vptr[i]) + ")");
  }
}

// ---- leaves -----------------------------------------------------------------

NodeId Tape::input(const Tensor& t) { return input(t.shape, t.data); }

NodeId Tape::input(Shape shape, std::span<const double> v) {
  if (numel(shape) != static_cast<int64_t>(v.size()))
    throw ShapeError("input: " + std::to_string(v.size()) + " values for shape " +
                     shape_str(shape));
  Node n;
  n.op = Op::kInput;
  n.shape = std::move(shape);
  n.store.assign(v.begin(), v.end());
  return push(std::move(n));
}

NodeId Tape::input_grad(const Tensor& t) {
  NodeId id = input(t.shape, t.data);
  node(id).needs_grad = true;
  return id;
}

NodeId Tape::param(Param& p) {
  if (freeze_params_) return frozen(p);
  p.value.ensure_grad();
  Node n;
  n.op = Op::kParam;
  n.needs_grad = true;
  n.shape = p.value.shape;
  n.vptr = p.value.data.data();
  n.gptr = p.value.grad.data();
  n.len = p.value.size();
  n.bound = &p;
  bound_params_.push_back(&p);
  return push(std::move(n));
}

NodeId Tape::frozen(Param& p) {
  Node n;
  n.op = Op::kFrozen;
  n.shape = p.value.shape;
  n.vptr = p.value.data.data();
  n.len = p.value.size();
  return push(std::move(n));
}

// ---- op helpers -------------------------------------------------------------

namespace {
void require_rank(const Shape& s, size_t rank, const char* op) {
  if (s.size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
}
}  // namespace

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require_rank(na.shape, 2, "matmul");
  require_rank(nb.shape, 2, "matmul");
  if (na.shape[1] != nb.shape[0])
    throw ShapeError("matmul: lhs " + shape_str(na.shape) + " rhs " + shape_str(nb.shape));
  const int64_t m = na.shape[0], k = na.shape[1], nn = nb.shape[1];
  Node n;
  n.op = Op::kMatmul;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.shape = {m, nn};
  n.args = {a, b, -1};
  n.store.resize(static_cast<size_t>(m * nn));
  detail::gemm(false, false, static_cast<int>(m), static_cast<int>(nn), static_cast<int>(k), 1.0,
               na.vptr, nb.vptr, 0.0, n.store.data());
  NodeId id = push(std::move(n));
  check_finite(id, "matmul");
  return id;
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require_rank(na.shape, 2, "matmul_nt");
  require_rank(nb.shape, 2, "matmul_nt");
  if (na.shape[1] != nb.shape[1])
    throw ShapeError("matmul_nt: lhs " + shape_str(na.shape) + " rhs " + shape_str(nb.shape));
  const int64_t m = na.shape[0], k = na.shape[1], nn = nb.shape[0];
  Node n;
  n.op = Op::kMatmulNT;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.shape = {m, nn};
  n.args = {a, b, -1};
  n.store.resize(static_cast<size_t>(m * nn));
  detail::gemm(false, true, static_cast<int>(m), static_cast<int>(nn), static_cast<int>(k), 1.0,
               na.vptr, nb.vptr, 0.0, n.store.data());
  NodeId id = push(std::move(n));
  check_finite(id, "matmul_nt");
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.shape != nb.shape)
    throw ShapeError("add: lhs " + shape_str(na.shape) + " rhs " + shape_str(nb.shape));
  Node n;
  n.op = Op::kAdd;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.shape = na.shape;
  n.args = {a, b, -1};
  n.store.resize(static_cast<size_t>(na.len));
  for (int64_t i = 0; i < na.len; ++i) n.store[static_cast<size_t>(i)] = na.vptr[i] + nb.vptr[i];
  NodeId id = push(std::move(n));
  check_finite(id, "add");
  return id;
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.shape != nb.shape)
    throw ShapeError("sub: lhs " + shape_str(na.shape) + " rhs " + shape_str(nb.shape));
  Node n;
  n.op = Op::kSub;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.shape = na.shape;
  n.args = {a, b, -1};
  n.store.resize(static_cast<size_t>(na.len));
  for (int64_t i = 0; i < na.len; ++i) n.store[static_cast<size_t>(i)] = na.vptr[i] - nb.vptr[i];
  NodeId id = push(std::move(n));
  check_finite(id, "sub");
  return id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.shape != nb.shape)
    throw ShapeError("mul: lhs " + shape_str(na.shape) + " rhs " + shape_str(nb.shape));
  Node n;
  n.op = Op::kMul;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.shape = na.shape;
  n.args = {a, b, -1};
  n.store.resize(static_cast<size_t>(na.len));
  for (int64_t i = 0; i < na.len; ++i) n.store[static_cast<size_t>(i)] = na.vptr[i] * nb.vptr[i];
  NodeId id = push(std::move(n));
  check_finite(id, "mul");
  return id;
}

NodeId Tape::bias_add(NodeId x, NodeId b) {
  const Node& nx = node(x);
  const Node& nb = node(b);
  require_rank(nx.shape, 2, "bias_add");
  require_rank(nb.shape, 1, "bias_add");
  if (nx.shape[1] != nb.shape[0])
    throw ShapeError("bias_add: x " + shape_str(nx.shape) + " bias " + shape_str(nb.shape));
  const int64_t m = nx.shape[0], c = nx.shape[1];
  Node n;
  n.op = Op::kBiasAdd;
  n.needs_grad = nx.needs_grad || nb.needs_grad;
  n.shape = nx.shape;
  n.args = {x, b, -1};
  n.store.resize(static_cast<size_t>(m * c));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < c; ++j)
      n.store[static_cast<size_t>(i * c + j)] = nx.vptr[i * c + j] + nb.vptr[j];
  NodeId id = push(std::move(n));
  check_finite(id, "bias_add");
  return id;
}

NodeId Tape::scale(NodeId x, double c) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kScale;
  n.needs_grad = nx.needs_grad;
  n.shape = nx.shape;
  n.args = {x, -1, -1};
  n.c0 = c;
  n.store.resize(static_cast<size_t>(nx.len));
  for (int64_t i = 0; i < nx.len; ++i) n.store[static_cast<size_t>(i)] = c * nx.vptr[i];
  NodeId id = push(std::move(n));
  check_finite(id, "scale");
  return id;
}

NodeId Tape::add_scalar(NodeId x, double c) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kAddScalar;
  n.needs_grad = nx.needs_grad;
  n.shape = nx.shape;
  n.args = {x, -1, -1};
  n.c0 = c;
  n.store.resize(static_cast<size_t>(nx.len));
  for (int64_t i = 0; i < nx.len; ++i) n.store[static_cast<size_t>(i)] = nx.vptr[i] + c;
  NodeId id = push(std::move(n));
  check_finite(id, "add_scalar");
  return id;
}

NodeId Tape::relu(NodeId x) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kRelu;
  n.needs_grad = nx.needs_grad;
  n.shape = nx.shape;
  n.args = {x, -1, -1};
  n.store.resize(static_cast<size_t>(nx.len));
  for (int64_t i = 0; i < nx.len; ++i)
    n.store[static_cast<size_t>(i)] = nx.vptr[i] > 0.0 ? nx.vptr[i] : 0.0;
  return push(std::move(n));
}

NodeId Tape::exp_op(NodeId x) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kExp;
  n.needs_grad = nx.needs_grad;
  n.shape = nx.shape;
  n.args = {x, -1, -1};
  n.store.resize(static_cast<size_t>(nx.len));
  for (int64_t i = 0; i < nx.len; ++i) n.store[static_cast<size_t>(i)] = std::exp(nx.vptr[i]);
  NodeId id = push(std::move(n));
  check_finite(id, "exp");
  return id;
}

NodeId Tape::log_op(NodeId x) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kLog;
  n.needs_grad = nx.needs_grad;
  n.shape = nx.shape;
  n.args = {x, -1, -1};
  n.store.resize(static_cast<size_t>(nx.len));
  for (int64_t i = 0; i < nx.len; ++i) {
    if (nx.vptr[i] <= 0.0)
      throw NumericError("log: non-positive input " + std::to_string(nx.vptr[i]) +
                         " at flat index " + std::to_string(i));
    n.store[static_cast<size_t>(i)] = std::log(nx.vptr[i]);
  }
  NodeId id = push(std::move(n));
  check_finite(id, "log");
  return id;
}

NodeId Tape::abs_op(NodeId x) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kAbs;
  n.needs_grad = nx.needs_grad;
  n.shape = nx.shape;
  n.args = {x, -1, -1};
  n.store.resize(static_cast<size_t>(nx.len));
  for (int64_t i = 0; i < nx.len; ++i) n.store[static_cast<size_t>(i)] = std::fabs(nx.vptr[i]);
  return push(std::move(n));
}

NodeId Tape::logsumexp_rows(NodeId x) {
  const Node& nx = node(x);
  require_rank(nx.shape, 2, "logsumexp_rows");
  const int64_t m = nx.shape[0], c = nx.shape[1];
  Node n;
  n.op = Op::kLogsumexpRows;
  n.needs_grad = nx.needs_grad;
  n.shape = {m};
  n.args = {x, -1, -1};
  n.store.resize(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    const double* row = nx.vptr + i * c;
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    n.store[static_cast<size_t>(i)] = mx + std::log(s);
  }
  NodeId id = push(std::move(n));
  check_finite(id, "logsumexp_rows");
  return id;
}

NodeId Tape::sum(NodeId x) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kSum;
  n.needs_grad = nx.needs_grad;
  n.shape = {1};
  n.args = {x, -1, -1};
  double s = 0.0;
  for (int64_t i = 0; i < nx.len; ++i) s += nx.vptr[i];
  n.store = {s};
  NodeId id = push(std::move(n));
  check_finite(id, "sum");
  return id;
}

NodeId Tape::mean(NodeId x) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kMean;
  n.needs_grad = nx.needs_grad;
  n.shape = {1};
  n.args = {x, -1, -1};
  double s = 0.0;
  for (int64_t i = 0; i < nx.len; ++i) s += nx.vptr[i];
  n.store = {s / static_cast<double>(nx.len)};
  NodeId id = push(std::move(n));
  check_finite(id, "mean");
  return id;
}

NodeId Tape::slice_cols(NodeId x, int64_t lo, int64_t hi) {
  const Node& nx = node(x);
  require_rank(nx.shape, 2, "slice_cols");
  if (lo < 0 || hi > nx.shape[1] || lo >= hi)
    throw ShapeError("slice_cols: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                     ") on " + shape_str(nx.shape));
  const int64_t m = nx.shape[0], c = nx.shape[1], w = hi - lo;
  Node n;
  n.op = Op::kSliceCols;
  n.needs_grad = nx.needs_grad;
  n.shape = {m, w};
  n.args = {x, -1, -1};
  n.i0 = lo;
  n.i1 = hi;
  n.store.resize(static_cast<size_t>(m * w));
  for (int64_t i = 0; i < m; ++i)
    std::memcpy(&n.store[static_cast<size_t>(i * w)], nx.vptr + i * c + lo,
                static_cast<size_t>(w) * sizeof(double));
  return push(std::move(n));
}

NodeId Tape::concat_cols(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require_rank(na.shape, 2, "concat_cols");
  require_rank(nb.shape, 2, "concat_cols");
  if (na.shape[0] != nb.shape[0])
    throw ShapeError("concat_cols: lhs " + shape_str(na.shape) + " rhs " + shape_str(nb.shape));
  const int64_t m = na.shape[0], c1 = na.shape[1], c2 = nb.shape[1];
  Node n;
  n.op = Op::kConcatCols;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.shape = {m, c1 + c2};
  n.args = {a, b, -1};
  n.store.resize(static_cast<size_t>(m * (c1 + c2)));
  for (int64_t i = 0; i < m; ++i) {
    std::memcpy(&n.store[static_cast<size_t>(i * (c1 + c2))], na.vptr + i * c1,
                static_cast<size_t>(c1) * sizeof(double));
    std::memcpy(&n.store[static_cast<size_t>(i * (c1 + c2) + c1)], nb.vptr + i * c2,
                static_cast<size_t>(c2) * sizeof(double));
  }
  return push(std::move(n));
}

NodeId Tape::repeat_rows(NodeId x, int64_t times) {
  const Node& nx = node(x);
  require_rank(nx.shape, 2, "repeat_rows");
  const int64_t m = nx.shape[0], c = nx.shape[1];
  Node n;
  n.op = Op::kRepeatRows;
  n.needs_grad = nx.needs_grad;
  n.shape = {m * times, c};
  n.args = {x, -1, -1};
  n.i0 = times;
  n.store.resize(static_cast<size_t>(m * times * c));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t t = 0; t < times; ++t)
      std::memcpy(&n.store[static_cast<size_t>((i * times + t) * c)], nx.vptr + i * c,
                  static_cast<size_t>(c) * sizeof(double));
  return push(std::move(n));
}

NodeId Tape::tile_rows(NodeId x, int64_t times) {
  const Node& nx = node(x);
  require_rank(nx.shape, 2, "tile_rows");
  const int64_t m = nx.shape[0], c = nx.shape[1];
  Node n;
  n.op = Op::kTileRows;
  n.needs_grad = nx.needs_grad;
  n.shape = {m * times, c};
  n.args = {x, -1, -1};
  n.i0 = times;
  n.store.resize(static_cast<size_t>(m * times * c));
  for (int64_t t = 0; t < times; ++t)
    std::memcpy(&n.store[static_cast<size_t>(t * m * c)], nx.vptr,
                static_cast<size_t>(m * c) * sizeof(double));
  return push(std::move(n));
}

NodeId Tape::take_diag(NodeId s) {
  const Node& ns = node(s);
  require_rank(ns.shape, 2, "take_diag");
  if (ns.shape[0] != ns.shape[1]) throw ShapeError("take_diag: not square " + shape_str(ns.shape));
  const int64_t k = ns.shape[0];
  Node n;
  n.op = Op::kTakeDiag;
  n.needs_grad = ns.needs_grad;
  n.shape = {k};
  n.args = {s, -1, -1};
  n.store.resize(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i) n.store[static_cast<size_t>(i)] = ns.vptr[i * k + i];
  return push(std::move(n));
}

NodeId Tape::mean_offdiag_exp(NodeId s, double shift) {
  const Node& ns = node(s);
  require_rank(ns.shape, 2, "mean_offdiag_exp");
  if (ns.shape[0] != ns.shape[1])
    throw ShapeError("mean_offdiag_exp: not square " + shape_str(ns.shape));
  const int64_t k = ns.shape[0];
  if (k < 2) throw ShapeError("mean_offdiag_exp: needs k >= 2, got " + shape_str(ns.shape));
  Node n;
  n.op = Op::kMeanOffdiagExp;
  n.needs_grad = ns.needs_grad;
  n.shape = {1};
  n.args = {s, -1, -1};
  n.c0 = shift;
  double acc = 0.0;
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < k; ++j)
      if (i != j) acc += std::exp(ns.vptr[i * k + j] + shift);
  n.store = {acc / static_cast<double>(k * (k - 1))};
  NodeId id = push(std::move(n));
  check_finite(id, "mean_offdiag_exp");
  return id;
}

NodeId Tape::contrast_rows(NodeId s) {
  const Node& ns = node(s);
  require_rank(ns.shape, 2, "contrast_rows");
  if (ns.shape[0] != ns.shape[1])
    throw ShapeError("contrast_rows: not square " + shape_str(ns.shape));
  const int64_t k = ns.shape[0];
  Node n;
  n.op = Op::kContrastRows;
  n.needs_grad = ns.needs_grad;
  n.shape = {k};
  n.args = {s, -1, -1};
  n.store.resize(static_cast<size_t>(k));
  // Row i: log(1 + sum_{j!=i} exp(s_ij - s_ii)). Including j == i as exp(0)
  // turns it into a plain logsumexp over deltas, stabilized by the max delta.
  for (int64_t i = 0; i < k; ++i) {
    const double* row = ns.vptr + i * k;
    const double sii = row[i];
    double mx = 0.0;
    for (int64_t j = 0; j < k; ++j)
      if (j != i) mx = std::max(mx, row[j] - sii);
    double acc = std::exp(0.0 - mx);
    for (int64_t j = 0; j < k; ++j)
      if (j != i) acc += std::exp(row[j] - sii - mx);
    n.store[static_cast<size_t>(i)] = mx + std::log(acc);
  }
  NodeId id = push(std::move(n));
  check_finite(id, "contrast_rows");
  return id;
}

NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta) {
  const Node& nx = node(x);
  const Node& ng = node(gamma);
  const Node& nb = node(beta);
  require_rank(nx.shape, 2, "layer_norm");
  if (ng.shape != Shape{nx.shape[1]} || nb.shape != Shape{nx.shape[1]})
    throw ShapeError("layer_norm: x " + shape_str(nx.shape) + " gamma " + shape_str(ng.shape) +
                     " beta " + shape_str(nb.shape));
  const int64_t m = nx.shape[0], c = nx.shape[1];
  constexpr double kEps = 1e-5;
  Node n;
  n.op = Op::kLayerNorm;
  n.needs_grad = nx.needs_grad || ng.needs_grad || nb.needs_grad;
  n.shape = nx.shape;
  n.args = {x, gamma, beta};
  n.store.resize(static_cast<size_t>(m * c));
  n.aux.resize(static_cast<size_t>(m * c + m));  // xhat, then rstd per row
  for (int64_t i = 0; i < m; ++i) {
    const double* row = nx.vptr + i * c;
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double rstd = 1.0 / std::sqrt(var + kEps);
    n.aux[static_cast<size_t>(m * c + i)] = rstd;
    for (int64_t j = 0; j < c; ++j) {
      const double xh = (row[j] - mu) * rstd;
      n.aux[static_cast<size_t>(i * c + j)] = xh;
      n.store[static_cast<size_t>(i * c + j)] = ng.vptr[j] * xh + nb.vptr[j];
    }
  }
  NodeId id = push(std::move(n));
  check_finite(id, "layer_norm");
  return id;
}

NodeId Tape::layer_norm_nchw(NodeId x, NodeId gamma, NodeId beta) {
  const Node& nx = node(x);
  const Node& ng = node(gamma);
  const Node& nb = node(beta);
  require_rank(nx.shape, 4, "layer_norm_nchw");
  const int64_t nN = nx.shape[0], c = nx.shape[1], h = nx.shape[2], w = nx.shape[3];
  if (ng.shape != Shape{c} || nb.shape != Shape{c})
    throw ShapeError("layer_norm_nchw: x " + shape_str(nx.shape) + " gamma " +
                     shape_str(ng.shape) + " beta " + shape_str(nb.shape));
  constexpr double kEps = 1e-5;
  const int64_t hw = h * w;
  Node n;
  n.op = Op::kLayerNormNCHW;
  n.needs_grad = nx.needs_grad || ng.needs_grad || nb.needs_grad;
  n.shape = nx.shape;
  n.args = {x, gamma, beta};
  n.store.resize(static_cast<size_t>(nN * c * hw));
  n.aux.resize(static_cast<size_t>(nN * c * hw + nN * hw));  // xhat, then rstd per position
  for (int64_t b = 0; b < nN; ++b) {
    for (int64_t p = 0; p < hw; ++p) {
      double mu = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) mu += nx.vptr[(b * c + ch) * hw + p];
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double d = nx.vptr[(b * c + ch) * hw + p] - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double rstd = 1.0 / std::sqrt(var + kEps);
      n.aux[static_cast<size_t>(nN * c * hw + b * hw + p)] = rstd;
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t idx = (b * c + ch) * hw + p;
        const double xh = (nx.vptr[idx] - mu) * rstd;
        n.aux[static_cast<size_t>(idx)] = xh;
        n.store[static_cast<size_t>(idx)] = ng.vptr[ch] * xh + nb.vptr[ch];
      }
    }
  }
  NodeId id = push(std::move(n));
  check_finite(id, "layer_norm_nchw");
  return id;
}

NodeId Tape::conv2d_same(NodeId x, NodeId kernel, NodeId bias, int64_t stride) {
  const Node& nx = node(x);
  const Node& nk = node(kernel);
  const Node& nb = node(bias);
  require_rank(nx.shape, 4, "conv2d");
  require_rank(nk.shape, 4, "conv2d");
  require_rank(nb.shape, 1, "conv2d");
  const int64_t nN = nx.shape[0], ci = nx.shape[1], h = nx.shape[2], w = nx.shape[3];
  const int64_t co = nk.shape[0], kh = nk.shape[2], kw = nk.shape[3];
  if (nk.shape[1] != ci || nb.shape[0] != co)
    throw ShapeError("conv2d: x " + shape_str(nx.shape) + " kernel " + shape_str(nk.shape) +
                     " bias " + shape_str(nb.shape));
  const auto [oh, pad_h] = same_pad(h, kh, stride);
  const auto [ow, pad_w] = same_pad(w, kw, stride);
  const int64_t patch = ci * kh * kw;
  const int64_t positions = nN * oh * ow;

  Node n;
  n.op = Op::kConv2d;
  n.needs_grad = nx.needs_grad || nk.needs_grad || nb.needs_grad;
  n.shape = {nN, co, oh, ow};
  n.args = {x, kernel, bias};
  n.i0 = stride;
  n.store.resize(static_cast<size_t>(nN * co * oh * ow));
  n.aux.assign(static_cast<size_t>(positions * patch), 0.0);  // im2col, kept for backward

  // im2col: row (b*oh*ow + oy*ow + ox) holds the patch [ci,kh,kw].
  double* col = n.aux.data();
  for (int64_t b = 0; b < nN; ++b)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        double* dst = col + ((b * oh + oy) * ow + ox) * patch;
        const int64_t iy0 = oy * stride - pad_h;
        const int64_t ix0 = ox * stride - pad_w;
        for (int64_t ch = 0; ch < ci; ++ch)
          for (int64_t ky = 0; ky < kh; ++ky) {
            const int64_t iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int64_t kx = 0; kx < kw; ++kx) {
              const int64_t ix = ix0 + kx;
              if (ix < 0 || ix >= w) continue;
              dst[(ch * kh + ky) * kw + kx] = nx.vptr[((b * ci + ch) * h + iy) * w + ix];
            }
          }
      }

  // out_mat [positions, co] = col @ kernel^T, kernel viewed as [co, patch].
  std::vector<double> out_mat(static_cast<size_t>(positions * co));
  detail::gemm(false, true, static_cast<int>(positions), static_cast<int>(co),
               static_cast<int>(patch), 1.0, col, nk.vptr, 0.0, out_mat.data());
  for (int64_t b = 0; b < nN; ++b)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        const double* src = &out_mat[static_cast<size_t>(((b * oh + oy) * ow + ox) * co)];
        for (int64_t ch = 0; ch < co; ++ch)
          n.store[static_cast<size_t>(((b * co + ch) * oh + oy) * ow + ox)] =
              src[ch] + nb.vptr[ch];
      }
  NodeId id = push(std::move(n));
  check_finite(id, "conv2d");
  return id;
}

NodeId Tape::avg_pool_hw(NodeId x) {
  const Node& nx = node(x);
  require_rank(nx.shape, 4, "avg_pool_hw");
  const int64_t nN = nx.shape[0], c = nx.shape[1], hw = nx.shape[2] * nx.shape[3];
  Node n;
  n.op = Op::kAvgPoolHW;
  n.needs_grad = nx.needs_grad;
  n.shape = {nN, c};
  n.args = {x, -1, -1};
  n.store.resize(static_cast<size_t>(nN * c));
  for (int64_t i = 0; i < nN * c; ++i) {
    double s = 0.0;
    for (int64_t p = 0; p < hw; ++p) s += nx.vptr[i * hw + p];
    n.store[static_cast<size_t>(i)] = s / static_cast<double>(hw);
  }
  NodeId id = push(std::move(n));
  check_finite(id, "avg_pool_hw");
  return id;
}

NodeId Tape::softmax_cross_entropy(NodeId logits, const Tensor& target_probs) {
  const Node& nl = node(logits);
  require_rank(nl.shape, 2, "softmax_cross_entropy");
  if (target_probs.shape != nl.shape)
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(nl.shape) + " targets " +
                     shape_str(target_probs.shape));
  const int64_t m = nl.shape[0], c = nl.shape[1];
  Node n;
  n.op = Op::kSoftmaxXent;
  n.needs_grad = nl.needs_grad;
  n.shape = {1};
  n.args = {logits, -1, -1};
  n.aux.resize(static_cast<size_t>(2 * m * c));  // softmax, then targets
  double loss = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    const double* row = nl.vptr + i * c;
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    double dot = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      n.aux[static_cast<size_t>(i * c + j)] = std::exp(row[j] - lse);
      dot += target_probs.data[static_cast<size_t>(i * c + j)] * row[j];
    }
    loss += lse - dot;
  }
  std::memcpy(n.aux.data() + m * c, target_probs.data.data(),
              static_cast<size_t>(m * c) * sizeof(double));
  n.store = {loss / static_cast<double>(m)};
  NodeId id = push(std::move(n));
  check_finite(id, "softmax_cross_entropy");
  return id;
}

NodeId Tape::reshape(NodeId x, Shape shape) {
  const Node& nx = node(x);
  if (numel(shape) != nx.len)
    throw ShapeError("reshape: " + shape_str(nx.shape) + " to " + shape_str(shape));
  Node n;
  n.op = Op::kReshape;
  n.needs_grad = nx.needs_grad;
  n.shape = std::move(shape);
  n.args = {x, -1, -1};
  n.vptr = nx.vptr;  // aliases the argument's storage
  n.len = nx.len;
  return push(std::move(n));
}

// ---- backward ---------------------------------------------------------------

void Tape::ensure_grad_buffers(NodeId root) {
  for (size_t i = 0; i <= static_cast<size_t>(root); ++i) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.op == Op::kParam) continue;  // accumulates into Param::grad
    n.gstore.assign(static_cast<size_t>(n.len), 0.0);
    n.gptr = n.gstore.data();
  }
}

void Tape::backward(NodeId root) {
  if (node(root).len != 1) throw ShapeError("backward: root must be scalar");
  const double one = 1.0;
  backward_with_grad(root, std::span<const double>(&one, 1));
}

void Tape::backward_with_grad(NodeId root, std::span<const double> seed) {
  if (backward_done_)
    throw Error("backward: tape already consumed; build a new forward pass first");
  backward_done_ = true;
  Node& r = node(root);
  if (static_cast<int64_t>(seed.size()) != r.len)
    throw ShapeError("backward: seed length " + std::to_string(seed.size()) + " vs root " +
                     shape_str(r.shape));
  if (!r.needs_grad) return;  // nothing reachable requires gradients
  for (Param* p : bound_params_) p->value.zero_grad();
  ensure_grad_buffers(root);
  for (int64_t i = 0; i < r.len; ++i) r.gptr[i] += seed[static_cast<size_t>(i)];
  for (int32_t i = root; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.needs_grad) continue;
    backward_node(n);
  }
}

void Tape::backward_node(Node& n) {
  auto arg = [&](int idx) -> Node& { return node(n.args[static_cast<size_t>(idx)]); };
  auto wants = [&](int idx) -> bool {
    return n.args[static_cast<size_t>(idx)] >= 0 && arg(idx).needs_grad;
  };
  const double* g = n.gptr;
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
    case Op::kFrozen:
      return;
    case Op::kMatmul: {
      Node& a = arg(0);
      Node& b = arg(1);
      const int64_t m = a.shape[0], k = a.shape[1], nn = b.shape[1];
      if (a.needs_grad)  // dA += dC @ B^T
        detail::gemm(false, true, static_cast<int>(m), static_cast<int>(k), static_cast<int>(nn),
                     1.0, g, b.vptr, 1.0, a.gptr);
      if (b.needs_grad)  // dB += A^T @ dC
        detail::gemm(true, false, static_cast<int>(k), static_cast<int>(nn), static_cast<int>(m),
                     1.0, a.vptr, g, 1.0, b.gptr);
      return;
    }
    case Op::kMatmulNT: {
      Node& a = arg(0);
      Node& b = arg(1);
      const int64_t m = a.shape[0], k = a.shape[1], nn = b.shape[0];
      if (a.needs_grad)  // dA += dC @ B
        detail::gemm(false, false, static_cast<int>(m), static_cast<int>(k), static_cast<int>(nn),
                     1.0, g, b.vptr, 1.0, a.gptr);
      if (b.needs_grad)  // dB += dC^T @ A
        detail::gemm(true, false, static_cast<int>(nn), static_cast<int>(k), static_cast<int>(m),
                     1.0, g, a.vptr, 1.0, b.gptr);
      return;
    }
    case Op::kAdd: {
      if (wants(0)) {
        Node& a = arg(0);
        for (int64_t i = 0; i < n.len; ++i) a.gptr[i] += g[i];
      }
      if (wants(1)) {
        Node& b = arg(1);
        for (int64_t i = 0; i < n.len; ++i) b.gptr[i] += g[i];
      }
      return;
    }
    case Op::kSub: {
      if (wants(0)) {
        Node& a = arg(0);
        for (int64_t i = 0; i < n.len; ++i) a.gptr[i] += g[i];
      }
      if (wants(1)) {
        Node& b = arg(1);
        for (int64_t i = 0; i < n.len; ++i) b.gptr[i] -= g[i];
      }
      return;
    }
    case Op::kMul: {
      Node& a = arg(0);
      Node& b = arg(1);
      if (a.needs_grad)
        for (int64_t i = 0; i < n.len; ++i) a.gptr[i] += g[i] * b.vptr[i];
      if (b.needs_grad)
        for (int64_t i = 0; i < n.len; ++i) b.gptr[i] += g[i] * a.vptr[i];
      return;
    }
    case Op::kBiasAdd: {
      Node& x = arg(0);
      Node& b = arg(1);
      const int64_t m = x.shape[0], c = x.shape[1];
      if (x.needs_grad)
        for (int64_t i = 0; i < m * c; ++i) x.gptr[i] += g[i];
      if (b.needs_grad)
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) b.gptr[j] += g[i * c + j];
      return;
    }
    case Op::kScale: {
      Node& x = arg(0);
      for (int64_t i = 0; i < n.len; ++i) x.gptr[i] += n.c0 * g[i];
      return;
    }
    case Op::kAddScalar: {
      Node& x = arg(0);
      for (int64_t i = 0; i < n.len; ++i) x.gptr[i] += g[i];
      return;
    }
    case Op::kRelu: {
      Node& x = arg(0);
      for (int64_t i = 0; i < n.len; ++i)
        if (x.vptr[i] > 0.0) x.gptr[i] += g[i];
      return;
    }
    case Op::kExp: {
      Node& x = arg(0);
      for (int64_t i = 0; i < n.len; ++i) x.gptr[i] += g[i] * n.vptr[i];
      return;
    }
    case Op::kLog: {
      Node& x = arg(0);
      for (int64_t i = 0; i < n.len; ++i) x.gptr[i] += g[i] / x.vptr[i];
      return;
    }
    case Op::kAbs: {
      Node& x = arg(0);
      for (int64_t i = 0; i < n.len; ++i) {
        if (x.vptr[i] > 0.0)
          x.gptr[i] += g[i];
        else if (x.vptr[i] < 0.0)
          x.gptr[i] -= g[i];
        // subgradient 0 at the kink
      }
      return;
    }
    case Op::kLogsumexpRows: {
      Node& x = arg(0);
      const int64_t m = x.shape[0], c = x.shape[1];
      for (int64_t i = 0; i < m; ++i) {
        const double yi = n.vptr[i];
        for (int64_t j = 0; j < c; ++j)
          x.gptr[i * c + j] += g[i] * std::exp(x.vptr[i * c + j] - yi);
      }
      return;
    }
    case Op::kSum: {
      Node& x = arg(0);
      for (int64_t i = 0; i < x.len; ++i) x.gptr[i] += g[0];
      return;
    }
    case Op::kMean: {
      Node& x = arg(0);
      const double s = g[0] / static_cast<double>(x.len);
      for (int64_t i = 0; i < x.len; ++i) x.gptr[i] += s;
      return;
    }
    case Op::kSliceCols: {
      Node& x = arg(0);
      const int64_t m = x.shape[0], c = x.shape[1], w = n.i1 - n.i0;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j) x.gptr[i * c + n.i0 + j] += g[i * w + j];
      return;
    }
    case Op::kConcatCols: {
      Node& a = arg(0);
      Node& b = arg(1);
      const int64_t m = a.shape[0], c1 = a.shape[1], c2 = b.shape[1];
      for (int64_t i = 0; i < m; ++i) {
        if (a.needs_grad)
          for (int64_t j = 0; j < c1; ++j) a.gptr[i * c1 + j] += g[i * (c1 + c2) + j];
        if (b.needs_grad)
          for (int64_t j = 0; j < c2; ++j) b.gptr[i * c2 + j] += g[i * (c1 + c2) + c1 + j];
      }
      return;
    }
    case Op::kRepeatRows: {
      Node& x = arg(0);
      const int64_t m = x.shape[0], c = x.shape[1], times = n.i0;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t t = 0; t < times; ++t)
          for (int64_t j = 0; j < c; ++j) x.gptr[i * c + j] += g[(i * times + t) * c + j];
      return;
    }
    case Op::kTileRows: {
      Node& x = arg(0);
      const int64_t mc = x.len, times = n.i0;
      for (int64_t t = 0; t < times; ++t)
        for (int64_t i = 0; i < mc; ++i) x.gptr[i] += g[t * mc + i];
      return;
    }
    case Op::kTakeDiag: {
      Node& s = arg(0);
      const int64_t k = s.shape[0];
      for (int64_t i = 0; i < k; ++i) s.gptr[i * k + i] += g[i];
      return;
    }
    case Op::kMeanOffdiagExp: {
      Node& s = arg(0);
      const int64_t k = s.shape[0];
      const double scale = g[0] / static_cast<double>(k * (k - 1));
      for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < k; ++j)
          if (i != j) s.gptr[i * k + j] += scale * std::exp(s.vptr[i * k + j] + n.c0);
      return;
    }
    case Op::kContrastRows: {
      Node& s = arg(0);
      const int64_t k = s.shape[0];
      for (int64_t i = 0; i < k; ++i) {
        const double ri = n.vptr[i];
        const double sii = s.vptr[i * k + i];
        double off = 0.0;
        for (int64_t j = 0; j < k; ++j) {
          if (j == i) continue;
          const double wij = std::exp(s.vptr[i * k + j] - sii - ri);
          s.gptr[i * k + j] += g[i] * wij;
          off += wij;
        }
        s.gptr[i * k + i] -= g[i] * off;
      }
      return;
    }
    case Op::kLayerNorm: {
      Node& x = arg(0);
      Node& ga = arg(1);
      Node& be = arg(2);
      const int64_t m = x.shape[0], c = x.shape[1];
      const double* xhat = n.aux.data();
      const double* rstd = n.aux.data() + m * c;
      for (int64_t i = 0; i < m; ++i) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int64_t j = 0; j < c; ++j) {
          const double dy = g[i * c + j];
          const double dxh = dy * ga.vptr[j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat[i * c + j];
          if (ga.needs_grad) ga.gptr[j] += dy * xhat[i * c + j];
          if (be.needs_grad) be.gptr[j] += dy;
        }
        if (x.needs_grad) {
          const double inv_c = 1.0 / static_cast<double>(c);
          for (int64_t j = 0; j < c; ++j) {
            const double dxh = g[i * c + j] * ga.vptr[j];
            x.gptr[i * c + j] +=
                rstd[i] * (dxh - inv_c * sum_dxhat - inv_c * xhat[i * c + j] * sum_dxhat_xhat);
          }
        }
      }
      return;
    }
    case Op::kLayerNormNCHW: {
      Node& x = arg(0);
      Node& ga = arg(1);
      Node& be = arg(2);
      const int64_t nN = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
      const double* xhat = n.aux.data();
      const double* rstd = n.aux.data() + nN * c * hw;
      for (int64_t b = 0; b < nN; ++b)
        for (int64_t p = 0; p < hw; ++p) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t idx = (b * c + ch) * hw + p;
            const double dy = g[idx];
            const double dxh = dy * ga.vptr[ch];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[idx];
            if (ga.needs_grad) ga.gptr[ch] += dy * xhat[idx];
            if (be.needs_grad) be.gptr[ch] += dy;
          }
          if (x.needs_grad) {
            const double inv_c = 1.0 / static_cast<double>(c);
            for (int64_t ch = 0; ch < c; ++ch) {
              const int64_t idx = (b * c + ch) * hw + p;
              const double dxh = g[idx] * ga.vptr[ch];
              x.gptr[idx] += rstd[b * hw + p] *
                             (dxh - inv_c * sum_dxhat - inv_c * xhat[idx] * sum_dxhat_xhat);
            }
          }
        }
      return;
    }
    case Op::kConv2d: {
      Node& x = arg(0);
      Node& kk = arg(1);
      Node& bb = arg(2);
      const int64_t nN = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3];
      const int64_t co = kk.shape[0], kh = kk.shape[2], kw = kk.shape[3];
      const int64_t stride = n.i0;
      const auto [oh, pad_h] = same_pad(h, kh, stride);
      const auto [ow, pad_w] = same_pad(w, kw, stride);
      const int64_t patch = ci * kh * kw;
      const int64_t positions = nN * oh * ow;
      // Gather dY back into [positions, co] layout.
      std::vector<double> dout(static_cast<size_t>(positions * co));
      for (int64_t b = 0; b < nN; ++b)
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox)
            for (int64_t ch = 0; ch < co; ++ch)
              dout[static_cast<size_t>(((b * oh + oy) * ow + ox) * co + ch)] =
                  g[((b * co + ch) * oh + oy) * ow + ox];
      if (bb.needs_grad)
        for (int64_t r = 0; r < positions; ++r)
          for (int64_t ch = 0; ch < co; ++ch) bb.gptr[ch] += dout[static_cast<size_t>(r * co + ch)];
      if (kk.needs_grad)  // dK += dOut^T @ col  -> [co, patch]
        detail::gemm(true, false, static_cast<int>(co), static_cast<int>(patch),
                     static_cast<int>(positions), 1.0, dout.data(), n.aux.data(), 1.0, kk.gptr);
      if (x.needs_grad) {
        // dCol = dOut @ K  -> [positions, patch], then col2im scatter-add.
        std::vector<double> dcol(static_cast<size_t>(positions * patch));
        detail::gemm(false, false, static_cast<int>(positions), static_cast<int>(patch),
                     static_cast<int>(co), 1.0, dout.data(), kk.vptr, 0.0, dcol.data());
        for (int64_t b = 0; b < nN; ++b)
          for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
              const double* src = &dcol[static_cast<size_t>(((b * oh + oy) * ow + ox) * patch)];
              const int64_t iy0 = oy * stride - pad_h;
              const int64_t ix0 = ox * stride - pad_w;
              for (int64_t ch = 0; ch < ci; ++ch)
                for (int64_t ky = 0; ky < kh; ++ky) {
                  const int64_t iy = iy0 + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    const int64_t ix = ix0 + kx;
                    if (ix < 0 || ix >= w) continue;
                    x.gptr[((b * ci + ch) * h + iy) * w + ix] += src[(ch * kh + ky) * kw + kx];
                  }
                }
            }
      }
      return;
    }
    case Op::kAvgPoolHW: {
      Node& x = arg(0);
      const int64_t nc = n.len, hw = x.shape[2] * x.shape[3];
      const double inv = 1.0 / static_cast<double>(hw);
      for (int64_t i = 0; i < nc; ++i)
        for (int64_t p = 0; p < hw; ++p) x.gptr[i * hw + p] += g[i] * inv;
      return;
    }
    case Op::kSoftmaxXent: {
      Node& logits = arg(0);
      const int64_t m = logits.shape[0], c = logits.shape[1];
      const double* softmax = n.aux.data();
      const double* targets = n.aux.data() + m * c;
      const double s = g[0] / static_cast<double>(m);
      for (int64_t i = 0; i < m * c; ++i) logits.gptr[i] += s * (softmax[i] - targets[i]);
      return;
    }
    case Op::kReshape: {
      Node& x = arg(0);
      for (int64_t i = 0; i < n.len; ++i) x.gptr[i] += g[i];
      return;
    }
  }
  throw Error(std::string("backward: unhandled op ") + op_name(n.op));
}

// ---- accessors ----------------------------------------------------------------

std::span<const double> Tape::value(NodeId id) const {
  const Node& n = node(id);
  return {n.vptr, static_cast<size_t>(n.len)};
}

std::span<const double> Tape::grad(NodeId id) const {
  const Node& n = node(id);
  if (n.gptr == nullptr) throw Error("grad: node has no gradient (run backward first)");
  return {n.gptr, static_cast<size_t>(n.len)};
}

const Shape& Tape::shape(NodeId id) const { return node(id).shape; }

double Tape::scalar(NodeId id) const {
  const Node& n = node(id);
  if (n.len != 1) throw ShapeError("scalar: node shape " + shape_str(n.shape));
  return n.vptr[0];
}

}  // namespace milens
