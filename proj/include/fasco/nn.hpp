#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fasco/util.hpp"

namespace fasco {

enum class Activation : unsigned char { Identity = 0, Tanh = 1, Exp = 2 };

struct DenseLayer {
  int in = 0;
  int out = 0;
  Activation act = Activation::Identity;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out
};

inline DenseLayer make_layer(int in, int out, Activation act) {
  DenseLayer l;
  l.in = in;
  l.out = out;
  l.act = act;
  l.weight.assign(static_cast<std::size_t>(in) * out, 0.0);
  l.bias.assign(static_cast<std::size_t>(out), 0.0);
  return l;
}

struct DenseStack {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }
};

// Records layer inputs and post-activation outputs of one forward pass.
struct StackTape {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> outputs;
};

namespace detail {

inline double activate(double z, Activation a) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Exp: return std::exp(z);
  }
  return z;
}

// derivative dz from dy, using the post-activation value y
inline double activation_backprop(double dy, double y, Activation a) {
  switch (a) {
    case Activation::Identity: return dy;
    case Activation::Tanh: return dy * (1.0 - y * y);
    case Activation::Exp: return dy * y;
  }
  return dy;
}

}  // namespace detail

inline std::vector<double> forward(const DenseStack& stack, std::span<const double> input,
                                   StackTape* tape = nullptr) {
  if (static_cast<int>(input.size()) != stack.input_dim())
    throw std::invalid_argument("forward: input has size " + std::to_string(input.size()) +
                                ", stack expects " + std::to_string(stack.input_dim()));
  std::vector<double> x(input.begin(), input.end());
  if (tape) {
    tape->inputs.clear();
    tape->outputs.clear();
  }
  for (const auto& l : stack.layers) {
    if (tape) tape->inputs.push_back(x);
    std::vector<double> y(static_cast<std::size_t>(l.out));
    for (int o = 0; o < l.out; ++o) {
      double z = l.bias[static_cast<std::size_t>(o)];
      const double* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) z += w[i] * x[static_cast<std::size_t>(i)];
      y[static_cast<std::size_t>(o)] = detail::activate(z, l.act);
    }
    if (tape) tape->outputs.push_back(y);
    x = std::move(y);
  }
  return x;
}

// Gradient accumulators shaped like a stack's parameters.
struct StackGrads {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;

  StackGrads() = default;
  explicit StackGrads(const DenseStack& stack) {
    for (const auto& l : stack.layers) {
      weight.emplace_back(l.weight.size(), 0.0);
      bias.emplace_back(l.bias.size(), 0.0);
    }
  }
};

// Exact reverse-mode pass; accumulates parameter gradients into `grads` and
// returns the gradient with respect to the stack input.
inline std::vector<double> backward(const DenseStack& stack, const StackTape& tape,
                                    std::span<const double> output_grad, StackGrads& grads) {
  const std::size_t L = stack.layers.size();
  if (tape.inputs.size() != L || tape.outputs.size() != L)
    throw std::invalid_argument("backward: tape does not match the stack");
  if (grads.weight.size() != L || grads.bias.size() != L)
    throw std::invalid_argument("backward: gradient shapes do not match the stack");
  if (static_cast<int>(output_grad.size()) != stack.output_dim())
    throw std::invalid_argument("backward: output gradient has wrong size");
  std::vector<double> dy(output_grad.begin(), output_grad.end());
  for (std::size_t li = L; li-- > 0;) {
    const auto& l = stack.layers[li];
    const auto& x = tape.inputs[li];
    const auto& y = tape.outputs[li];
    if (static_cast<int>(x.size()) != l.in || static_cast<int>(y.size()) != l.out)
      throw std::invalid_argument("backward: stale tape for layer " + std::to_string(li));
    std::vector<double> dx(static_cast<std::size_t>(l.in), 0.0);
    auto& gw = grads.weight[li];
    auto& gb = grads.bias[li];
    for (int o = 0; o < l.out; ++o) {
      double dz = detail::activation_backprop(dy[static_cast<std::size_t>(o)],
                                              y[static_cast<std::size_t>(o)], l.act);
      gb[static_cast<std::size_t>(o)] += dz;
      const double* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
      double* gwrow = gw.data() + static_cast<std::size_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) {
        gwrow[i] += dz * x[static_cast<std::size_t>(i)];
        dx[static_cast<std::size_t>(i)] += dz * w[i];
      }
    }
    dy = std::move(dx);
  }
  return dy;
}

// ---------------------------------------------------------------------------
// embeddings

struct EmbeddingTable {
  int vocab = 0;
  int dim = 0;
  std::vector<double> table;  // vocab x dim

  std::span<const double> row(int idx) const {
    if (idx < 0 || idx >= vocab)
      throw std::out_of_range("embedding index " + std::to_string(idx) + " out of range [0, " +
                              std::to_string(vocab) + ")");
    return {table.data() + static_cast<std::size_t>(idx) * dim, static_cast<std::size_t>(dim)};
  }
};

inline EmbeddingTable make_embedding(int vocab, int dim) {
  EmbeddingTable e;
  e.vocab = vocab;
  e.dim = dim;
  e.table.assign(static_cast<std::size_t>(vocab) * dim, 0.0);
  return e;
}

inline std::span<const double> embed(const EmbeddingTable& e, int idx) { return e.row(idx); }

inline void accumulate_embedding_grad(const EmbeddingTable& e, std::vector<double>& grads,
                                      int idx, std::span<const double> d) {
  if (grads.size() != e.table.size())
    throw std::invalid_argument("embedding gradient buffer has wrong size");
  if (idx < 0 || idx >= e.vocab) throw std::out_of_range("embedding gradient index out of range");
  if (static_cast<int>(d.size()) != e.dim)
    throw std::invalid_argument("embedding gradient has wrong width");
  double* g = grads.data() + static_cast<std::size_t>(idx) * e.dim;
  for (int i = 0; i < e.dim; ++i) g[i] += d[static_cast<std::size_t>(i)];
}

// ---------------------------------------------------------------------------
// initialization

// uniform [-sqrt(1/fan_in), sqrt(1/fan_in)]
inline void init_dense(DenseStack& stack, Rng& rng) {
  for (auto& l : stack.layers) {
    double bound = std::sqrt(1.0 / std::max(1, l.in));
    for (auto& w : l.weight) w = rng.range(-bound, bound);
    for (auto& b : l.bias) b = rng.range(-bound, bound);
  }
}

inline void init_embedding(EmbeddingTable& e, Rng& rng) {
  double bound = std::sqrt(1.0 / std::max(1, e.dim));
  for (auto& w : e.table) w = rng.range(-bound, bound);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<double> m;
  std::vector<double> v;

  static AdamState for_size(std::size_t n, double lr) {
    AdamState s;
    s.lr = lr;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    return s;
  }
};

struct ParamBlock {
  double* values = nullptr;
  const double* grads = nullptr;
  std::size_t size = 0;
};

// One Adam update with bias correction over a fixed block order; the blocks
// must tile the state exactly.
inline void adam_step(std::span<const ParamBlock> blocks, AdamState& st) {
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.size;
  if (total != st.m.size())
    throw std::invalid_argument("adam_step: parameter blocks do not match the optimizer state");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  std::size_t off = 0;
  for (const auto& b : blocks) {
    for (std::size_t i = 0; i < b.size; ++i) {
      const double g = b.grads[i];
      double& m = st.m[off + i];
      double& v = st.v[off + i];
      m = st.beta1 * m + (1.0 - st.beta1) * g;
      v = st.beta2 * v + (1.0 - st.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      b.values[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
    off += b.size;
  }
}

}  // namespace fasco
