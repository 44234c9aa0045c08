#pragma once

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "mmlnet/core/matrix.hpp"
#include "mmlnet/core/rng.hpp"

namespace mmlnet {

enum class Init { Zeros, Ones, XavierUniform, Normal02 };

/// One named trainable tensor plus its gradient and Adam moment buffers.
struct Param {
  int id = -1;
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;
  Matrix v;
  // Parameters inside the encoders train with their own learning rate.
  bool encoder_group = false;
};

/// Registry of all trainable tensors. Initialization is keyed by (seed, name)
/// so parameter values do not depend on registration order, and ids are dense
/// indices so gradient accumulation can walk parameters deterministically.
class ParamStore {
 public:
  Param& add(const std::string& name, int rows, int cols, Init init, std::uint64_t seed,
             bool encoder_group = false) {
    if (by_name_.count(name)) throw std::invalid_argument("ParamStore: duplicate param " + name);
    Param& p = params_.emplace_back();
    p.id = static_cast<int>(params_.size()) - 1;
    p.name = name;
    p.value = Matrix(rows, cols);
    p.grad = Matrix(rows, cols);
    p.m = Matrix(rows, cols);
    p.v = Matrix(rows, cols);
    p.encoder_group = encoder_group;
    initialize(p.value, init, seed, name);
    by_name_.emplace(name, p.id);
    return p;
  }

  bool exists(const std::string& name) const { return by_name_.count(name) != 0; }

  Param& get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::invalid_argument("ParamStore: unknown param " + name);
    return params_[static_cast<std::size_t>(it->second)];
  }

  const Param& get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::invalid_argument("ParamStore: unknown param " + name);
    return params_[static_cast<std::size_t>(it->second)];
  }

  Param& by_id(int id) { return params_[static_cast<std::size_t>(id)]; }
  const Param& by_id(int id) const { return params_[static_cast<std::size_t>(id)]; }

  int count() const { return static_cast<int>(params_.size()); }

  std::deque<Param>& all() { return params_; }
  const std::deque<Param>& all() const { return params_; }

  void zero_grads() {
    for (Param& p : params_) p.grad.fill(0.0);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Param& p : params_) n += p.value.size();
    return n;
  }

 private:
  static void initialize(Matrix& value, Init init, std::uint64_t seed, const std::string& name) {
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        value.fill(1.0);
        break;
      case Init::XavierUniform: {
        Rng rng = Rng::stream(seed, "init/" + name);
        const double limit = std::sqrt(6.0 / (value.rows + value.cols));
        for (double& x : value.data) x = rng.uniform(-limit, limit);
        break;
      }
      case Init::Normal02: {
        Rng rng = Rng::stream(seed, "init/" + name);
        for (double& x : value.data) x = rng.normal(0.0, 0.02);
        break;
      }
    }
  }

  // deque keeps Param& references stable across add() calls.
  std::deque<Param> params_;
  std::unordered_map<std::string, int> by_name_;
};

}  // namespace mmlnet
