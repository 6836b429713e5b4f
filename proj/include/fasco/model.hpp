#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fasco/calibrate.hpp"
#include "fasco/catalog.hpp"
#include "fasco/features.hpp"
#include "fasco/nn.hpp"
#include "fasco/plan.hpp"
#include "fasco/util.hpp"

namespace fasco {

struct Dims {
  int embed_dim = 8;
  int state_dim = 16;
  int hidden_dim = 32;
  int backbone_layers = 1;
  int state_layers = 1;
  int cost_layers = 2;

  bool operator==(const Dims&) const = default;
};

struct NodeWeights {
  double lambda_default = 1.0;   // index nodes
  double lambda_nonindex = 2.0;  // non-index, non-root
  double lambda_last = 4.0;      // root

  bool operator==(const NodeWeights&) const = default;
};

inline const std::set<std::string>& default_index_ops() {
  static const std::set<std::string> ops = {"Index Scan", "Index Only Scan", "Bitmap Scan"};
  return ops;
}

struct TrainConfig {
  double lr = 0.001;
  int epochs = 10;
  std::uint64_t seed = 1;
  NodeWeights weights;
  bool calibration_enabled = true;
  Dims dims;
  std::set<std::string> index_ops = default_index_ops();

  bool operator==(const TrainConfig&) const = default;
};

// Offsets of the backbone input vector:
// [op embedding | subquery | card_left | card_right | filter_count |
//  join-key embedding | s_left | log1p(c_left) | s_right | log1p(c_right)]
struct InputLayout {
  int embed_dim = 0;
  int state_dim = 0;

  int op_off() const { return 0; }
  int subquery_off() const { return embed_dim; }
  int card_left_off() const { return embed_dim + 1; }
  int card_right_off() const { return embed_dim + 2; }
  int filters_off() const { return embed_dim + 3; }
  int joinkey_off() const { return embed_dim + 4; }
  int s_left_off() const { return 2 * embed_dim + 4; }
  int c_left_off() const { return s_left_off() + state_dim; }
  int s_right_off() const { return c_left_off() + 1; }
  int c_right_off() const { return s_right_off() + state_dim; }
  int total() const { return c_right_off() + 1; }
};

struct ModelParams {
  Dims dims;
  Vocabulary op_vocab;
  Vocabulary joinkey_vocab;
  double normalizer = 1.0;  // largest catalog table at training time
  EmbeddingTable op_embedding;
  EmbeddingTable joinkey_embedding;
  DenseStack backbone;
  DenseStack state_head;
  DenseStack cost_head;
  TrainConfig config;

  InputLayout layout() const { return {dims.embed_dim, dims.state_dim}; }

  std::size_t parameter_count() const {
    return op_embedding.table.size() + joinkey_embedding.table.size() +
           backbone.parameter_count() + state_head.parameter_count() +
           cost_head.parameter_count();
  }
};

inline DenseStack make_stack(int in, int hidden, int out, int layers, Activation final_act) {
  DenseStack s;
  for (int i = 0; i < layers; ++i) {
    int li = i == 0 ? in : hidden;
    int lo = i + 1 == layers ? out : hidden;
    Activation a = i + 1 == layers ? final_act : Activation::Tanh;
    s.layers.push_back(make_layer(li, lo, a));
  }
  return s;
}

inline ModelParams init_model(const Dims& dims, Vocabulary op_vocab, Vocabulary joinkey_vocab,
                              double normalizer, std::uint64_t seed) {
  ModelParams p;
  p.dims = dims;
  p.op_vocab = std::move(op_vocab);
  p.joinkey_vocab = std::move(joinkey_vocab);
  p.normalizer = std::max(1.0, normalizer);
  InputLayout layout{dims.embed_dim, dims.state_dim};
  p.op_embedding = make_embedding(p.op_vocab.size(), dims.embed_dim);
  p.joinkey_embedding = make_embedding(p.joinkey_vocab.size(), dims.embed_dim);
  p.backbone =
      make_stack(layout.total(), dims.hidden_dim, dims.hidden_dim, dims.backbone_layers,
                 Activation::Tanh);
  p.state_head =
      make_stack(dims.hidden_dim, dims.hidden_dim, dims.state_dim, dims.state_layers,
                 Activation::Tanh);
  // EXP output keeps the cost strictly positive
  p.cost_head =
      make_stack(dims.hidden_dim, dims.hidden_dim, 1, dims.cost_layers, Activation::Exp);
  Rng rng(seed);
  init_embedding(p.op_embedding, rng);
  init_embedding(p.joinkey_embedding, rng);
  init_dense(p.backbone, rng);
  init_dense(p.state_head, rng);
  init_dense(p.cost_head, rng);
  return p;
}

// ---------------------------------------------------------------------------
// single-node forward

struct NodeTape {
  std::vector<double> input;
  StackTape backbone;
  StackTape state;
  StackTape cost;
};

struct NodeOutput {
  std::vector<double> state;
  double cost = 0;
};

inline NodeOutput node_forward(const ModelParams& p, const FeatureVector& fv,
                               std::span<const double> s_left, double c_left,
                               std::span<const double> s_right, double c_right,
                               NodeTape* tape = nullptr) {
  const InputLayout L = p.layout();
  if (static_cast<int>(s_left.size()) != L.state_dim ||
      static_cast<int>(s_right.size()) != L.state_dim)
    throw std::invalid_argument("node_forward: child state has wrong dimension");
  std::vector<double> x(static_cast<std::size_t>(L.total()), 0.0);
  auto op_row = embed(p.op_embedding, fv.operator_idx);
  std::copy(op_row.begin(), op_row.end(), x.begin() + L.op_off());
  x[static_cast<std::size_t>(L.subquery_off())] = fv.subquery_flag;
  x[static_cast<std::size_t>(L.card_left_off())] = fv.card_left;
  x[static_cast<std::size_t>(L.card_right_off())] = fv.card_right;
  x[static_cast<std::size_t>(L.filters_off())] = fv.filter_count;
  auto jk_row = embed(p.joinkey_embedding, fv.join_key_idx);
  std::copy(jk_row.begin(), jk_row.end(), x.begin() + L.joinkey_off());
  std::copy(s_left.begin(), s_left.end(), x.begin() + L.s_left_off());
  x[static_cast<std::size_t>(L.c_left_off())] = std::log1p(c_left);
  std::copy(s_right.begin(), s_right.end(), x.begin() + L.s_right_off());
  x[static_cast<std::size_t>(L.c_right_off())] = std::log1p(c_right);

  NodeOutput out;
  std::vector<double> o = forward(p.backbone, x, tape ? &tape->backbone : nullptr);
  out.state = forward(p.state_head, o, tape ? &tape->state : nullptr);
  std::vector<double> c = forward(p.cost_head, o, tape ? &tape->cost : nullptr);
  out.cost = c[0];
  if (tape) tape->input = std::move(x);
  return out;
}

// ---------------------------------------------------------------------------
// whole-plan evaluation

struct PlanEval {
  struct Node {
    const PlanNode* node = nullptr;
    int left = -1;
    int right = -1;
    FeatureVector fv;
    NodeTape tape;
    std::vector<double> state;
    double cost = 0;
  };
  std::vector<Node> nodes;  // post-order; root is last
};

namespace detail {

inline int eval_plan_rec(const ModelParams& p, const Catalog& catalog, const PlanNode& n,
                         const PlanNode* sibling, bool keep_tapes, PlanEval& out) {
  int left = -1, right = -1;
  if (n.children.size() == 2) {
    left = eval_plan_rec(p, catalog, n.children[0], &n.children[1], keep_tapes, out);
    right = eval_plan_rec(p, catalog, n.children[1], &n.children[0], keep_tapes, out);
  } else if (!n.children.empty()) {
    throw config_error("plan node " + std::to_string(n.node_id) +
                       " is unary; canonicalize with merge_unary first");
  }
  PlanEval::Node e;
  e.node = &n;
  e.left = left;
  e.right = right;
  e.fv = build_feature_vector(n, sibling, catalog, p.op_vocab, p.joinkey_vocab, p.normalizer);
  std::vector<double> zero(static_cast<std::size_t>(p.dims.state_dim), 0.0);
  std::span<const double> sl = left >= 0 ? std::span<const double>(out.nodes[left].state)
                                         : std::span<const double>(zero);
  std::span<const double> sr = right >= 0 ? std::span<const double>(out.nodes[right].state)
                                          : std::span<const double>(zero);
  double cl = left >= 0 ? out.nodes[left].cost : 0.0;
  double cr = right >= 0 ? out.nodes[right].cost : 0.0;
  NodeOutput res = node_forward(p, e.fv, sl, cl, sr, cr, keep_tapes ? &e.tape : nullptr);
  e.state = std::move(res.state);
  e.cost = res.cost;
  out.nodes.push_back(std::move(e));
  return static_cast<int>(out.nodes.size()) - 1;
}

}  // namespace detail

inline PlanEval eval_plan(const ModelParams& p, const PlanTree& t, const Catalog& catalog,
                          bool keep_tapes = false) {
  PlanEval out;
  out.nodes.reserve(node_count(t));
  detail::eval_plan_rec(p, catalog, t.root, nullptr, keep_tapes, out);
  return out;
}

struct EstimateResult {
  double root_cost_ms = 0;
  std::vector<std::pair<int, double>> node_costs;  // (node_id, cost) post-order
  CalibrationReport calibration;
};

// Full inference path: calibration (when enabled and a store is given),
// featurization, then one bottom-up pass through the shared networks.
inline EstimateResult estimate(const ModelParams& p, const PlanTree& tree,
                               const Catalog& catalog, const LookupStore* lists = nullptr) {
  EstimateResult result;
  const PlanTree* input = &tree;
  PlanTree calibrated;
  if (lists != nullptr && p.config.calibration_enabled) {
    auto [t, report] = apply_calibration(tree, *lists);
    calibrated = std::move(t);
    result.calibration = std::move(report);
    input = &calibrated;
  }
  PlanEval eval = eval_plan(p, *input, catalog, false);
  for (const auto& e : eval.nodes) result.node_costs.emplace_back(e.node->node_id, e.cost);
  result.root_cost_ms = eval.nodes.back().cost;
  return result;
}

// ---------------------------------------------------------------------------
// loss

inline double node_weight(const PlanNode& n, bool is_root, const NodeWeights& w,
                          const std::set<std::string>& index_ops) {
  if (is_root) return w.lambda_last;
  if (index_ops.count(n.op) > 0) return w.lambda_default;
  return w.lambda_nonindex;
}

// L = (1/n) * sum_i lambda_i * max(c_i/l_i, l_i/c_i)
inline double plan_loss(std::span<const double> costs, std::span<const double> labels,
                        std::span<const double> lambdas) {
  if (costs.size() != labels.size() || costs.size() != lambdas.size() || costs.empty())
    throw std::invalid_argument("plan_loss: size mismatch or empty plan");
  double sum = 0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    if (!(costs[i] > 0) || !(labels[i] > 0))
      throw std::invalid_argument("plan_loss: costs and labels must be positive");
    sum += lambdas[i] * std::max(costs[i] / labels[i], labels[i] / costs[i]);
  }
  return sum / static_cast<double>(costs.size());
}

// ---------------------------------------------------------------------------
// gradients

struct ModelGrads {
  std::vector<double> op_embedding;
  std::vector<double> joinkey_embedding;
  StackGrads backbone;
  StackGrads state_head;
  StackGrads cost_head;

  explicit ModelGrads(const ModelParams& p)
      : op_embedding(p.op_embedding.table.size(), 0.0),
        joinkey_embedding(p.joinkey_embedding.table.size(), 0.0),
        backbone(p.backbone),
        state_head(p.state_head),
        cost_head(p.cost_head) {}
};

inline std::vector<ParamBlock> param_blocks(ModelParams& p, const ModelGrads& g) {
  std::vector<ParamBlock> blocks;
  blocks.push_back({p.op_embedding.table.data(), g.op_embedding.data(),
                    p.op_embedding.table.size()});
  blocks.push_back({p.joinkey_embedding.table.data(), g.joinkey_embedding.data(),
                    p.joinkey_embedding.table.size()});
  auto add_stack = [&](DenseStack& s, const StackGrads& sg) {
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
      blocks.push_back({s.layers[i].weight.data(), sg.weight[i].data(), s.layers[i].weight.size()});
      blocks.push_back({s.layers[i].bias.data(), sg.bias[i].data(), s.layers[i].bias.size()});
    }
  };
  add_stack(p.backbone, g.backbone);
  add_stack(p.state_head, g.state_head);
  add_stack(p.cost_head, g.cost_head);
  return blocks;
}

// d/dc of max(c/l, l/c); the c/l branch is chosen at ties
inline double q_error_dcost(double c, double l) {
  if (c >= l) return 1.0 / l;
  return -l / (c * c);
}

// Backpropagates the weighted Q-error loss through the whole tree, including
// through the state vectors and log1p child-cost links. Returns the loss.
inline double backward_plan(const ModelParams& p, const PlanEval& eval,
                            std::span<const double> labels, std::span<const double> lambdas,
                            ModelGrads& grads) {
  const std::size_t n = eval.nodes.size();
  if (labels.size() != n || lambdas.size() != n)
    throw std::invalid_argument("backward_plan: label count does not match the plan");
  const InputLayout L = p.layout();
  const double inv_n = 1.0 / static_cast<double>(n);

  double loss = 0;
  std::vector<double> dc(n, 0.0);
  std::vector<std::vector<double>> ds(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = eval.nodes[i].cost;
    const double l = labels[i];
    if (!(c > 0) || !(l > 0))
      throw std::invalid_argument("backward_plan: costs and labels must be positive");
    loss += lambdas[i] * std::max(c / l, l / c) * inv_n;
    dc[i] = lambdas[i] * inv_n * q_error_dcost(c, l);
    ds[i].assign(static_cast<std::size_t>(L.state_dim), 0.0);
  }

  for (std::size_t i = n; i-- > 0;) {
    const auto& e = eval.nodes[i];
    std::vector<double> dcost_out = {dc[i]};
    std::vector<double> d_o = backward(p.cost_head, e.tape.cost, dcost_out, grads.cost_head);
    std::vector<double> d_o2 = backward(p.state_head, e.tape.state, ds[i], grads.state_head);
    for (std::size_t k = 0; k < d_o.size(); ++k) d_o[k] += d_o2[k];
    std::vector<double> dx = backward(p.backbone, e.tape.backbone, d_o, grads.backbone);

    accumulate_embedding_grad(p.op_embedding, grads.op_embedding, e.fv.operator_idx,
                              std::span<const double>(dx.data() + L.op_off(),
                                                      static_cast<std::size_t>(L.embed_dim)));
    accumulate_embedding_grad(p.joinkey_embedding, grads.joinkey_embedding, e.fv.join_key_idx,
                              std::span<const double>(dx.data() + L.joinkey_off(),
                                                      static_cast<std::size_t>(L.embed_dim)));
    if (e.left >= 0) {
      auto li = static_cast<std::size_t>(e.left);
      for (int k = 0; k < L.state_dim; ++k)
        ds[li][static_cast<std::size_t>(k)] += dx[static_cast<std::size_t>(L.s_left_off() + k)];
      dc[li] += dx[static_cast<std::size_t>(L.c_left_off())] / (1.0 + eval.nodes[li].cost);
    }
    if (e.right >= 0) {
      auto ri = static_cast<std::size_t>(e.right);
      for (int k = 0; k < L.state_dim; ++k)
        ds[ri][static_cast<std::size_t>(k)] += dx[static_cast<std::size_t>(L.s_right_off() + k)];
      dc[ri] += dx[static_cast<std::size_t>(L.c_right_off())] / (1.0 + eval.nodes[ri].cost);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// training

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_mean_loss;
};

namespace detail {

// Per-node runtime labels; tiny floor keeps Q-error defined when an adapter
// reports a rounded-to-zero time.
inline double node_label(const PlanNode& n) {
  if (!n.actual_time_ms)
    throw train_error("plan node " + std::to_string(n.node_id) +
                      " has no actual_time_ms label");
  return std::max(*n.actual_time_ms, 1e-3);
}

}  // namespace detail

// Per-plan Adam steps over shuffled samples. Trees must already be canonical
// (binary) and fully labeled; calibration runs here when enabled.
inline TrainResult train(std::vector<PlanTree> samples, const Catalog& catalog,
                         const LookupStore* lists, const TrainConfig& config) {
  if (samples.empty()) throw train_error("training set is empty");
  if (config.epochs < 1) throw train_error("epochs must be >= 1");
  if (!(config.lr > 0)) throw train_error("learning rate must be positive");
  for (const auto& t : samples) {
    auto violations = validate(t);
    if (!violations.empty())
      throw train_error("invalid training plan: " + violations.front());
    if (!t.root.actual_time_ms) throw train_error("training plan has no runtime labels");
  }
  if (lists != nullptr && config.calibration_enabled)
    for (auto& t : samples) t = apply_calibration(std::move(t), *lists).first;

  Vocabulary ops = build_operator_vocab(samples);
  Vocabulary joinkeys = build_joinkey_vocab(samples);
  ModelParams params =
      init_model(config.dims, std::move(ops), std::move(joinkeys), catalog.max_table_rows(),
                 config.seed);
  params.config = config;

  // start the cost head at the geometric mean of the root labels
  double log_sum = 0;
  for (const auto& t : samples) log_sum += std::log(detail::node_label(t.root));
  params.cost_head.layers.back().bias[0] = log_sum / static_cast<double>(samples.size());

  AdamState adam = AdamState::for_size(params.parameter_count(), config.lr);

  TrainResult result;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(config.seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(epoch) + 1);
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t idx : order) {
      const PlanTree& t = samples[idx];
      PlanEval eval = eval_plan(params, t, catalog, true);
      const std::size_t n = eval.nodes.size();
      std::vector<double> labels(n), lambdas(n);
      for (std::size_t i = 0; i < n; ++i) {
        labels[i] = detail::node_label(*eval.nodes[i].node);
        lambdas[i] = node_weight(*eval.nodes[i].node, i + 1 == n, config.weights,
                                 config.index_ops);
      }
      ModelGrads grads(params);
      loss_sum += backward_plan(params, eval, labels, lambdas, grads);
      adam_step(param_blocks(params, grads), adam);
    }
    result.epoch_mean_loss.push_back(loss_sum / static_cast<double>(samples.size()));
  }
  result.params = std::move(params);
  return result;
}

}  // namespace fasco
