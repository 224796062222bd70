#pragma once

#include <memory>
#include <string>

#include "milens/rng.hpp"
#include "milens/tape.hpp"
#include "milens/tensor.hpp"

namespace milens {

enum class CriticKind { kInnerProduct, kBilinear, kSeparable, kConcatMlp };

CriticKind critic_from_string(const std::string& s);
std::string to_string(CriticKind kind);

// A critic maps two batches of representations to the full score matrix
// S[i][j] = f(x_i, y_j). Parameters live in the ParamStore passed at
// construction; the training loop owns all mutation.
class Critic {
 public:
  virtual ~Critic() = default;
  // xs: [K, d1], ys: [K, d2] -> [K, K]
  virtual NodeId score_matrix(Tape& tape, NodeId xs, NodeId ys) const = 0;
  virtual CriticKind kind() const = 0;
};

// f(x, y) = x^T y (requires d1 == d2).
class InnerProductCritic final : public Critic {
 public:
  InnerProductCritic(int64_t d1, int64_t d2);
  NodeId score_matrix(Tape& tape, NodeId xs, NodeId ys) const override;
  CriticKind kind() const override { return CriticKind::kInnerProduct; }
};

// f(x, y) = x^T W y.
class BilinearCritic final : public Critic {
 public:
  BilinearCritic(ParamStore& store, const std::string& prefix, int64_t d1, int64_t d2, Rng& rng);
  NodeId score_matrix(Tape& tape, NodeId xs, NodeId ys) const override;
  CriticKind kind() const override { return CriticKind::kBilinear; }

  Param& weight() { return *w_; }

 private:
  Param* w_;
};

// f(x, y) = phi1(x)^T phi2(y); each phi is a one-hidden-layer ReLU MLP with
// 100 units followed by a linear map to 100 dimensions.
class SeparableCritic final : public Critic {
 public:
  SeparableCritic(ParamStore& store, const std::string& prefix, int64_t d1, int64_t d2, Rng& rng,
                  int64_t hidden = 100, int64_t embed = 100);
  NodeId score_matrix(Tape& tape, NodeId xs, NodeId ys) const override;
  CriticKind kind() const override { return CriticKind::kSeparable; }

 private:
  NodeId embed(Tape& tape, NodeId x, Param* w1, Param* b1, Param* w2, Param* b2) const;
  Param *w1a_, *b1a_, *w2a_, *b2a_;
  Param *w1b_, *b1b_, *w2b_, *b2b_;
};

// f(x, y) = phi([x, y]) with a single 200-unit ReLU hidden layer and a
// linear map to one output, evaluated on all K^2 pairs.
class ConcatMlpCritic final : public Critic {
 public:
  ConcatMlpCritic(ParamStore& store, const std::string& prefix, int64_t d1, int64_t d2, Rng& rng,
                  int64_t hidden = 200);
  NodeId score_matrix(Tape& tape, NodeId xs, NodeId ys) const override;
  CriticKind kind() const override { return CriticKind::kConcatMlp; }

 private:
  int64_t d1_, d2_;
  Param *w1_, *b1_, *w2_, *b2_;
};

std::unique_ptr<Critic> make_critic(CriticKind kind, ParamStore& store, const std::string& prefix,
                                    int64_t d1, int64_t d2, Rng& rng);

}  // namespace milens
