#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "milens/tensor.hpp"

namespace milens {

using NodeId = int32_t;

// Reverse-mode autodiff over dense f64 tensors. A Tape is built fresh for
// each forward pass; backward() walks it once in reverse. Parameter leaves
// borrow their storage from the owning Param and accumulate gradients
// directly into Param::grad. Not reentrant: one tape, one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves -------------------------------------------------------------
  NodeId input(const Tensor& t);                        // copies, no gradient
  NodeId input(Shape shape, std::span<const double> v); // copies, no gradient
  NodeId input_grad(const Tensor& t);  // copies, tracks gradient (for jacobians)
  NodeId param(Param& p);              // borrows value, accumulates into p.grad
  NodeId frozen(Param& p);             // borrows value, no gradient

  // While set, param() binds parameters frozen. Lets model code stay oblivious
  // to whether a pass is for training, inference, or an input-only jacobian.
  void freeze_params(bool on) { freeze_params_ = on; }

  // ---- ops ----------------------------------------------------------------
  NodeId matmul(NodeId a, NodeId b);     // [m,k]@[k,n] -> [m,n]
  NodeId matmul_nt(NodeId a, NodeId b);  // [m,k]@[n,k]^T -> [m,n]
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId bias_add(NodeId x, NodeId b);  // [m,n] + [n]
  NodeId scale(NodeId x, double c);
  NodeId add_scalar(NodeId x, double c);
  NodeId relu(NodeId x);
  NodeId exp_op(NodeId x);
  NodeId log_op(NodeId x);
  NodeId abs_op(NodeId x);  // subgradient 0 at 0
  NodeId logsumexp_rows(NodeId x);  // [m,n] -> [m]
  NodeId sum(NodeId x);             // -> scalar [1]
  NodeId mean(NodeId x);            // -> scalar [1]
  NodeId slice_cols(NodeId x, int64_t lo, int64_t hi);  // [m,n] -> [m,hi-lo]
  NodeId concat_cols(NodeId a, NodeId b);               // [m,n1],[m,n2] -> [m,n1+n2]
  NodeId repeat_rows(NodeId x, int64_t times);  // each row repeated `times` consecutively
  NodeId tile_rows(NodeId x, int64_t times);    // whole matrix stacked `times` times
  NodeId take_diag(NodeId s);                   // [k,k] -> [k]
  // mean over the k(k-1) off-diagonal entries of exp(s + shift) -> scalar
  NodeId mean_offdiag_exp(NodeId s, double shift);
  // per row i: log(1 + sum_{j != i} exp(s_ij - s_ii)), computed stably -> [k]
  NodeId contrast_rows(NodeId s);
  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta);       // over last axis of [m,n]
  NodeId layer_norm_nchw(NodeId x, NodeId gamma, NodeId beta);  // over C of [n,c,h,w]
  NodeId conv2d_same(NodeId x, NodeId kernel, NodeId bias, int64_t stride);
  NodeId avg_pool_hw(NodeId x);  // [n,c,h,w] -> [n,c]
  // mean_i [ logsumexp(logits_i) - sum_c targets_ic * logits_ic ] -> scalar
  NodeId softmax_cross_entropy(NodeId logits, const Tensor& target_probs);
  NodeId reshape(NodeId x, Shape shape);

  // ---- execution ----------------------------------------------------------
  void backward(NodeId root);  // root must be scalar; seeds grad 1
  void backward_with_grad(NodeId root, std::span<const double> seed);

  std::span<const double> value(NodeId id) const;
  std::span<const double> grad(NodeId id) const;  // valid after backward
  const Shape& shape(NodeId id) const;
  double scalar(NodeId id) const;

  size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : uint8_t {
    kInput, kParam, kFrozen,
    kMatmul, kMatmulNT, kAdd, kSub, kMul, kBiasAdd, kScale, kAddScalar,
    kRelu, kExp, kLog, kAbs, kLogsumexpRows, kSum, kMean,
    kSliceCols, kConcatCols, kRepeatRows, kTileRows,
    kTakeDiag, kMeanOffdiagExp, kContrastRows,
    kLayerNorm, kLayerNormNCHW, kConv2d, kAvgPoolHW, kSoftmaxXent,
    kReshape,
  };

  struct Node {
    Op op;
    bool needs_grad = false;
    Shape shape;
    std::array<NodeId, 3> args{-1, -1, -1};
    double c0 = 0.0;
    int64_t i0 = 0, i1 = 0;
    std::vector<double> store;     // owned value (empty for borrowed leaves)
    std::vector<double> gstore;    // owned grad buffer
    std::vector<double> aux;       // saved intermediates for backward
    const double* vptr = nullptr;  // value view
    double* gptr = nullptr;        // grad accumulation target
    int64_t len = 0;
    Param* bound = nullptr;
  };

  NodeId push(Node&& n);
  Node& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
  void check_finite(NodeId id, const char* opname);
  void ensure_grad_buffers(NodeId root);
  void backward_node(Node& n);
  static const char* op_name(Op op);

  std::vector<Node> nodes_;
  std::vector<Param*> bound_params_;
  bool backward_done_ = false;
  bool freeze_params_ = false;
};

}  // namespace milens
