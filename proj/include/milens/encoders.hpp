#pragma once

#include <memory>
#include <string>
#include <vector>

#include "milens/rng.hpp"
#include "milens/tape.hpp"
#include "milens/tensor.hpp"

namespace milens {

enum class EncoderKind { kIdentity, kMlp, kSkipMlp, kConvNet, kRealNvp };

EncoderKind encoder_from_string(const std::string& s);
std::string to_string(EncoderKind kind);

// Spatial layout of a flattened view, needed by the convolutional encoder.
struct ViewGeometry {
  int64_t channels = 1;
  int64_t height = 1;
  int64_t width = 1;
  int64_t flat() const { return channels * height * width; }
};

// A parameterized differentiable map from a batch of flat view vectors
// [N, d_in] to representations [N, d_out]. Parameters are created in the
// ParamStore passed at construction under the given name prefix.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual NodeId encode(Tape& tape, NodeId x) const = 0;
  virtual int64_t in_dim() const = 0;
  virtual int64_t out_dim() const = 0;
  virtual EncoderKind kind() const = 0;
  virtual bool invertible() const { return false; }

  // Exact inverse for invertible encoders; others raise.
  virtual Tensor decode(const Tensor& z) const;

  // Value-only forward pass.
  Tensor apply(const Tensor& x) const;
};

class IdentityEncoder final : public Encoder {
 public:
  explicit IdentityEncoder(int64_t dim) : dim_(dim) {}
  NodeId encode(Tape& tape, NodeId x) const override;
  int64_t in_dim() const override { return dim_; }
  int64_t out_dim() const override { return dim_; }
  EncoderKind kind() const override { return EncoderKind::kIdentity; }
  bool invertible() const override { return true; }
  Tensor decode(const Tensor& z) const override { return z; }

 private:
  int64_t dim_;
};

// input -> 300 -> 300 -> 100 with ReLU after the hidden layers.
class MlpEncoder final : public Encoder {
 public:
  MlpEncoder(ParamStore& store, const std::string& prefix, int64_t in_dim, Rng& rng,
             int64_t hidden = 300, int64_t out = 100);
  NodeId encode(Tape& tape, NodeId x) const override;
  int64_t in_dim() const override { return in_dim_; }
  int64_t out_dim() const override { return out_dim_; }
  EncoderKind kind() const override { return EncoderKind::kMlp; }

 private:
  int64_t in_dim_, out_dim_;
  Param *w0_, *b0_, *w1_, *b1_, *w2_, *b2_;
};

// Four residual blocks over the input dimension:
//   block(h) = h + W2 relu(W1 h + b1) + b2
// with W2 and b2 zero-initialized, so the whole map starts as the identity.
class SkipMlpEncoder final : public Encoder {
 public:
  SkipMlpEncoder(ParamStore& store, const std::string& prefix, int64_t dim, Rng& rng,
                 int64_t blocks = 4);
  NodeId encode(Tape& tape, NodeId x) const override;
  int64_t in_dim() const override { return dim_; }
  int64_t out_dim() const override { return dim_; }
  EncoderKind kind() const override { return EncoderKind::kSkipMlp; }

 private:
  struct Block {
    Param *w1, *b1, *w2, *b2;
  };
  int64_t dim_;
  std::vector<Block> blocks_;
};

// conv5x5/2 (64) -> conv5x5/2 (128) -> layer norm over channels ->
// spatial average pool -> dense 100.
class ConvNetEncoder final : public Encoder {
 public:
  ConvNetEncoder(ParamStore& store, const std::string& prefix, ViewGeometry geometry, Rng& rng,
                 int64_t out = 100);
  NodeId encode(Tape& tape, NodeId x) const override;
  int64_t in_dim() const override { return geometry_.flat(); }
  int64_t out_dim() const override { return out_dim_; }
  EncoderKind kind() const override { return EncoderKind::kConvNet; }

 private:
  ViewGeometry geometry_;
  int64_t out_dim_;
  Param *k1_, *c1b_, *k2_, *c2b_, *ln_gamma_, *ln_beta_, *fc_w_, *fc_b_;
};

// Additive-coupling flow: 30 layers over an even input dimension. Layer k
// splits the vector into contiguous halves (A, B), alternating which half is
// shifted, and applies B <- B + shift_k(A) where shift_k is a two-hidden-layer
// ReLU MLP with 512 units. Output layers of the shift MLPs start at zero, so
// the flow starts as the identity. Volume preserving by construction.
class RealNvpEncoder final : public Encoder {
 public:
  RealNvpEncoder(ParamStore& store, const std::string& prefix, int64_t dim, Rng& rng,
                 int64_t layers = 30, int64_t hidden = 512);
  NodeId encode(Tape& tape, NodeId x) const override;
  int64_t in_dim() const override { return dim_; }
  int64_t out_dim() const override { return dim_; }
  EncoderKind kind() const override { return EncoderKind::kRealNvp; }
  bool invertible() const override { return true; }
  Tensor decode(const Tensor& z) const override;

 private:
  struct Coupling {
    Param *w0, *b0, *w1, *b1, *w2, *b2;
    bool shift_second;  // which half receives the shift
  };
  NodeId shift(Tape& tape, const Coupling& c, NodeId a) const;
  int64_t dim_, half_;
  std::vector<Coupling> couplings_;
};

// Exact Jacobian [d_out, d_in] at a single input, assembled from one
// reverse-mode pass per output coordinate (batched). Guards against
// d_out * d_in > 10^7 entries.
Tensor jacobian(const Encoder& encoder, const Tensor& x);

std::unique_ptr<Encoder> make_encoder(EncoderKind kind, ParamStore& store,
                                      const std::string& prefix, ViewGeometry geometry, Rng& rng);

}  // namespace milens
