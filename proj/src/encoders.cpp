#include "milens/encoders.hpp"

#include <cstring>

#include "milens/error.hpp"

namespace milens {

EncoderKind encoder_from_string(const std::string& s) {
  if (s == "identity") return EncoderKind::kIdentity;
  if (s == "mlp") return EncoderKind::kMlp;
  if (s == "skip_mlp") return EncoderKind::kSkipMlp;
  if (s == "convnet") return EncoderKind::kConvNet;
  if (s == "realnvp") return EncoderKind::kRealNvp;
  throw ConfigError("encoder: unknown kind '" + s +
                    "' (expected identity|mlp|skip_mlp|convnet|realnvp)");
}

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kIdentity: return "identity";
    case EncoderKind::kMlp: return "mlp";
    case EncoderKind::kSkipMlp: return "skip_mlp";
    case EncoderKind::kConvNet: return "convnet";
    case EncoderKind::kRealNvp: return "realnvp";
  }
  return "?";
}

Tensor Encoder::decode(const Tensor&) const {
  throw Error("decode: encoder '" + to_string(kind()) + "' is not invertible");
}

Tensor Encoder::apply(const Tensor& x) const {
  Tape tape;
  tape.freeze_params(true);
  NodeId out = encode(tape, tape.input(x));
  auto v = tape.value(out);
  return Tensor(tape.shape(out), std::vector<double>(v.begin(), v.end()));
}

namespace {
void check_input(const Tape& tape, NodeId x, int64_t dim, const char* who) {
  const Shape& s = tape.shape(x);
  if (s.size() != 2 || s[1] != dim)
    throw ShapeError(std::string(who) + ": expected [N," + std::to_string(dim) + "], got " +
                     shape_str(s));
}
}  // namespace

// ---- identity -----------------------------------------------------------------

NodeId IdentityEncoder::encode(Tape& tape, NodeId x) const {
  check_input(tape, x, dim_, "identity");
  return x;
}

// ---- plain MLP ----------------------------------------------------------------

MlpEncoder::MlpEncoder(ParamStore& store, const std::string& prefix, int64_t in_dim, Rng& rng,
                       int64_t hidden, int64_t out)
    : in_dim_(in_dim), out_dim_(out) {
  w0_ = &store.create_dense_init(prefix + "/l0/W", {in_dim, hidden}, in_dim, hidden, rng);
  b0_ = &store.create(prefix + "/l0/b", {hidden});
  w1_ = &store.create_dense_init(prefix + "/l1/W", {hidden, hidden}, hidden, hidden, rng);
  b1_ = &store.create(prefix + "/l1/b", {hidden});
  w2_ = &store.create_dense_init(prefix + "/l2/W", {hidden, out}, hidden, out, rng);
  b2_ = &store.create(prefix + "/l2/b", {out});
}

NodeId MlpEncoder::encode(Tape& tape, NodeId x) const {
  check_input(tape, x, in_dim_, "mlp");
  NodeId h = tape.relu(tape.bias_add(tape.matmul(x, tape.param(*w0_)), tape.param(*b0_)));
  h = tape.relu(tape.bias_add(tape.matmul(h, tape.param(*w1_)), tape.param(*b1_)));
  return tape.bias_add(tape.matmul(h, tape.param(*w2_)), tape.param(*b2_));
}

// ---- skip MLP -----------------------------------------------------------------

SkipMlpEncoder::SkipMlpEncoder(ParamStore& store, const std::string& prefix, int64_t dim,
                               Rng& rng, int64_t blocks)
    : dim_(dim) {
  for (int64_t i = 0; i < blocks; ++i) {
    const std::string base = prefix + "/block" + std::to_string(i);
    Block b;
    b.w1 = &store.create_dense_init(base + "/l0/W", {dim, dim}, dim, dim, rng);
    b.b1 = &store.create(base + "/l0/b", {dim});
    b.w2 = &store.create(base + "/l1/W", {dim, dim});  // zero: block starts as identity
    b.b2 = &store.create(base + "/l1/b", {dim});
    blocks_.push_back(b);
  }
}

NodeId SkipMlpEncoder::encode(Tape& tape, NodeId x) const {
  check_input(tape, x, dim_, "skip_mlp");
  NodeId h = x;
  for (const Block& b : blocks_) {
    NodeId inner = tape.relu(tape.bias_add(tape.matmul(h, tape.param(*b.w1)), tape.param(*b.b1)));
    NodeId delta = tape.bias_add(tape.matmul(inner, tape.param(*b.w2)), tape.param(*b.b2));
    h = tape.add(h, delta);
  }
  return h;
}

// ---- ConvNet ------------------------------------------------------------------

ConvNetEncoder::ConvNetEncoder(ParamStore& store, const std::string& prefix,
                               ViewGeometry geometry, Rng& rng, int64_t out)
    : geometry_(geometry), out_dim_(out) {
  const int64_t c1 = 64, c2 = 128, k = 5;
  const int64_t fan_k1 = geometry.channels * k * k;
  k1_ = &store.create_dense_init(prefix + "/conv0/K", {c1, geometry.channels, k, k}, fan_k1, c1,
                                 rng);
  c1b_ = &store.create(prefix + "/conv0/b", {c1});
  k2_ = &store.create_dense_init(prefix + "/conv1/K", {c2, c1, k, k}, c1 * k * k, c2, rng);
  c2b_ = &store.create(prefix + "/conv1/b", {c2});
  ln_gamma_ = &store.create(prefix + "/ln/gamma", {c2});
  for (double& g : ln_gamma_->value.data) g = 1.0;
  ln_beta_ = &store.create(prefix + "/ln/beta", {c2});
  fc_w_ = &store.create_dense_init(prefix + "/fc/W", {c2, out}, c2, out, rng);
  fc_b_ = &store.create(prefix + "/fc/b", {out});
}

NodeId ConvNetEncoder::encode(Tape& tape, NodeId x) const {
  check_input(tape, x, geometry_.flat(), "convnet");
  const int64_t n = tape.shape(x)[0];
  NodeId img = tape.reshape(x, {n, geometry_.channels, geometry_.height, geometry_.width});
  NodeId h = tape.relu(tape.conv2d_same(img, tape.param(*k1_), tape.param(*c1b_), 2));
  h = tape.relu(tape.conv2d_same(h, tape.param(*k2_), tape.param(*c2b_), 2));
  h = tape.layer_norm_nchw(h, tape.param(*ln_gamma_), tape.param(*ln_beta_));
  NodeId pooled = tape.avg_pool_hw(h);
  return tape.bias_add(tape.matmul(pooled, tape.param(*fc_w_)), tape.param(*fc_b_));
}

// ---- RealNVP ------------------------------------------------------------------

RealNvpEncoder::RealNvpEncoder(ParamStore& store, const std::string& prefix, int64_t dim,
                               Rng& rng, int64_t layers, int64_t hidden)
    : dim_(dim), half_(dim / 2) {
  if (dim % 2 != 0)
    throw ShapeError("realnvp: input dimension must be even, got " + std::to_string(dim));
  for (int64_t i = 0; i < layers; ++i) {
    const std::string base = prefix + "/coupling" + std::to_string(i);
    Coupling c;
    c.shift_second = (i % 2 == 0);
    c.w0 = &store.create_dense_init(base + "/l0/W", {half_, hidden}, half_, hidden, rng);
    c.b0 = &store.create(base + "/l0/b", {hidden});
    c.w1 = &store.create_dense_init(base + "/l1/W", {hidden, hidden}, hidden, hidden, rng);
    c.b1 = &store.create(base + "/l1/b", {hidden});
    c.w2 = &store.create(base + "/l2/W", {hidden, half_});  // zero: flow starts as identity
    c.b2 = &store.create(base + "/l2/b", {half_});
    couplings_.push_back(c);
  }
}

NodeId RealNvpEncoder::shift(Tape& tape, const Coupling& c, NodeId a) const {
  NodeId h = tape.relu(tape.bias_add(tape.matmul(a, tape.param(*c.w0)), tape.param(*c.b0)));
  h = tape.relu(tape.bias_add(tape.matmul(h, tape.param(*c.w1)), tape.param(*c.b1)));
  return tape.bias_add(tape.matmul(h, tape.param(*c.w2)), tape.param(*c.b2));
}

NodeId RealNvpEncoder::encode(Tape& tape, NodeId x) const {
  check_input(tape, x, dim_, "realnvp");
  NodeId h = x;
  for (const Coupling& c : couplings_) {
    NodeId first = tape.slice_cols(h, 0, half_);
    NodeId second = tape.slice_cols(h, half_, dim_);
    if (c.shift_second) {
      NodeId shifted = tape.add(second, shift(tape, c, first));
      h = tape.concat_cols(first, shifted);
    } else {
      NodeId shifted = tape.add(first, shift(tape, c, second));
      h = tape.concat_cols(shifted, second);
    }
  }
  return h;
}

Tensor RealNvpEncoder::decode(const Tensor& z) const {
  if (z.shape.size() != 2 || z.shape[1] != dim_)
    throw ShapeError("realnvp decode: expected [N," + std::to_string(dim_) + "], got " +
                     shape_str(z.shape));
  Tape tape;
  tape.freeze_params(true);
  NodeId h = tape.input(z);
  for (auto it = couplings_.rbegin(); it != couplings_.rend(); ++it) {
    NodeId first = tape.slice_cols(h, 0, half_);
    NodeId second = tape.slice_cols(h, half_, dim_);
    if (it->shift_second) {
      NodeId restored = tape.sub(second, shift(tape, *it, first));
      h = tape.concat_cols(first, restored);
    } else {
      NodeId restored = tape.sub(first, shift(tape, *it, second));
      h = tape.concat_cols(restored, second);
    }
  }
  auto v = tape.value(h);
  return Tensor(z.shape, std::vector<double>(v.begin(), v.end()));
}

// ---- Jacobian -----------------------------------------------------------------

Tensor jacobian(const Encoder& encoder, const Tensor& x) {
  if (numel(x.shape) != encoder.in_dim())
    throw ShapeError("jacobian: input has " + std::to_string(numel(x.shape)) +
                     " entries, encoder expects " + std::to_string(encoder.in_dim()));
  const int64_t din = encoder.in_dim();
  const int64_t dout = encoder.out_dim();
  if (dout * din > 10'000'000)
    throw Error("jacobian: " + std::to_string(dout) + "x" + std::to_string(din) +
                " exceeds the 1e7 entry guard");
  // One reverse-mode pass per output coordinate, batched: replicate x into
  // d_out rows and seed the output gradient with the identity.
  Tensor batch({dout, din});
  for (int64_t r = 0; r < dout; ++r)
    std::memcpy(&batch.data[static_cast<size_t>(r * din)], x.data.data(),
                static_cast<size_t>(din) * sizeof(double));
  Tape tape;
  tape.freeze_params(true);
  NodeId in = tape.input_grad(batch);
  NodeId out = encoder.encode(tape, in);
  std::vector<double> seed(static_cast<size_t>(dout * dout), 0.0);
  for (int64_t r = 0; r < dout; ++r) seed[static_cast<size_t>(r * dout + r)] = 1.0;
  tape.backward_with_grad(out, seed);
  auto g = tape.grad(in);
  return Tensor({dout, din}, std::vector<double>(g.begin(), g.end()));
}

std::unique_ptr<Encoder> make_encoder(EncoderKind kind, ParamStore& store,
                                      const std::string& prefix, ViewGeometry geometry, Rng& rng) {
  switch (kind) {
    case EncoderKind::kIdentity: return std::make_unique<IdentityEncoder>(geometry.flat());
    case EncoderKind::kMlp:
      return std::make_unique<MlpEncoder>(store, prefix, geometry.flat(), rng);
    case EncoderKind::kSkipMlp:
      return std::make_unique<SkipMlpEncoder>(store, prefix, geometry.flat(), rng);
    case EncoderKind::kConvNet:
      return std::make_unique<ConvNetEncoder>(store, prefix, geometry, rng);
    case EncoderKind::kRealNvp:
      return std::make_unique<RealNvpEncoder>(store, prefix, geometry.flat(), rng);
  }
  throw Error("make_encoder: unreachable");
}

}  // namespace milens
