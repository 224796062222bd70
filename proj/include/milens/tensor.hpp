#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "milens/error.hpp"
#include "milens/rng.hpp"

namespace milens {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major f64 tensor with an optional gradient slot.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until materialized; same length as data

  Tensor() = default;
  Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
      throw ShapeError("Tensor: " + std::to_string(data.size()) + " values for shape " +
                       shape_str(shape));
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }
};

// Named trainable parameter. Lives in a ParamStore so that optimizers and
// checkpoints see a stable creation-ordered list.
struct Param {
  std::string name;
  Tensor value;

  Param(std::string n, Shape s) : name(std::move(n)), value(std::move(s)) { value.ensure_grad(); }

  int64_t size() const { return value.size(); }
  std::span<double> data() { return value.data; }
  std::span<double> grad() { return value.grad; }
};

// Owns parameters; addresses are stable for the store's lifetime.
class ParamStore {
 public:
  Param& create(const std::string& name, Shape shape) {
    params_.emplace_back(name, std::move(shape));
    return params_.back();
  }

  // Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
  Param& create_dense_init(const std::string& name, Shape shape, int64_t fan_in, int64_t fan_out,
                           Rng& rng) {
    Param& p = create(name, std::move(shape));
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& x : p.value.data) x = rng.uniform(-a, a);
    return p;
  }

  size_t size() const { return params_.size(); }
  Param& at(size_t i) { return params_[i]; }
  const Param& at(size_t i) const { return params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Param* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

 private:
  std::deque<Param> params_;
};

}  // namespace milens
