#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmsc/autograd.hpp"
#include "mmsc/content.hpp"
#include "mmsc/errors.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/model.hpp"
#include "mmsc/optim.hpp"
#include "mmsc/rng.hpp"

namespace mmsc {

struct NodeAttentionResult {
  Var out;
  std::vector<Tensor> alphas;  // one attention row per head, for inspection
};

// Node-level attention over one meta-path neighborhood: per head, scores
// LeakyReLU(w^T [h_i || h_j]) are softmax-normalized over neighbors and the
// attended mix is projected and passed through ELU. Head outputs are
// concatenated, then mixed back down to width d.
inline NodeAttentionResult node_level_attention(Tape& tape, const ParamStore& store,
                                                RelationType task, std::size_t path_index,
                                                const Var& center_h,
                                                const std::vector<Var>& neighbor_hs,
                                                std::size_t n_heads) {
  if (neighbor_hs.empty()) throw UsageError("node_level_attention: no neighbors");
  const std::size_t d = center_h.value().size();
  Var neighbors = stack_rows(neighbor_hs);
  NodeAttentionResult result;
  std::vector<Var> head_outputs;
  head_outputs.reserve(n_heads);
  for (std::size_t u = 0; u < n_heads; ++u) {
    Var attn_vec = param(tape, store, names::node_attn(task, path_index, u));
    Var w_center = slice_vec(attn_vec, 0, d);
    Var w_neighbor = slice_vec(attn_vec, d, d);
    Var scores = add_scalar_bcast(mat_vec(neighbors, w_neighbor), dot(center_h, w_center));
    Var alpha = softmax(leaky_relu(scores));
    result.alphas.push_back(alpha.value());
    Var mixed = vec_mat(alpha, neighbors);
    head_outputs.push_back(elu(vec_mat(mixed, param(tape, store, names::node_proj(task, u)))));
  }
  Var concatenated = head_outputs[0];
  for (std::size_t u = 1; u < n_heads; ++u) {
    concatenated = concat_vec(concatenated, head_outputs[u]);
  }
  result.out = vec_mat(concatenated, param(tape, store, names::node_mix(task)));
  return result;
}

// One meta-path's inputs to the path-level softmax: the center item's own
// node-level representation plus those of its path neighbors.
struct PathAttentionInput {
  Var center_z;
  std::vector<Var> neighbor_zs;
};

struct PathAttentionResult {
  Var out;
  Tensor beta;  // path weights, for inspection
};

// Semantic attention across meta-paths: each path's weight sums
// score^T tanh(wb (.) z_j + bias) over the neighbors' representations; the
// softmax over paths combines the centers' representations.
inline PathAttentionResult path_level_attention(Tape& tape, const ParamStore& store,
                                                RelationType task,
                                                const std::vector<PathAttentionInput>& inputs) {
  if (inputs.empty()) throw UsageError("path_level_attention: no meta-paths with neighbors");
  Var wb = param(tape, store, names::path_wb(task));
  Var bias = param(tape, store, names::path_bias(task));
  Var score = param(tape, store, names::path_score(task));
  std::vector<Var> weights;
  std::vector<Var> centers;
  weights.reserve(inputs.size());
  centers.reserve(inputs.size());
  for (const auto& input : inputs) {
    if (input.neighbor_zs.empty()) throw UsageError("path_level_attention: path without neighbors");
    Var z_rows = stack_rows(input.neighbor_zs);
    Var transformed = tanh_op(add_rowvec(mul_rowvec(z_rows, wb), bias));
    weights.push_back(sum(mat_vec(transformed, score)));
    centers.push_back(input.center_z);
  }
  Var beta = softmax(concat_scalars(weights));
  PathAttentionResult result;
  result.beta = beta.value();
  result.out = vec_mat(beta, stack_rows(centers));
  return result;
}

// Caches shared by every embedding computed on one tape against one graph
// view: pooled content constants, neighbor expansions, and node-level
// representations are all reused across items in a batch.
class EmbedContext {
 public:
  EmbedContext(Tape& tape, const ParamStore& store, const ModelConfig& cfg, const RelGraph& graph,
               const EmbeddingProvider& provider, std::uint64_t sample_seed)
      : tape_(tape),
        store_(store),
        cfg_(cfg),
        graph_(graph),
        provider_(provider),
        sample_seed_(sample_seed),
        paths_{cfg.paths(RelationType::Substitutable), cfg.paths(RelationType::Complementary)} {}

  Tape& tape() { return tape_; }
  const ModelConfig& config() const { return cfg_; }
  const ParamStore& store() const { return store_; }
  const RelGraph& graph() const { return graph_; }
  const EmbeddingProvider& provider() const { return provider_; }
  const std::vector<MetaPath>& paths(RelationType task) const {
    return paths_[static_cast<int>(task)];
  }

  // Pooled content vector as a tape constant.
  Var pooled_h(ItemId item) {
    auto [it, inserted] = h_cache_.try_emplace(item);
    if (inserted) it->second = tape_.constant(provider_.pooled(item));
    return it->second;
  }

  // Meta-path neighborhood, deterministic per (seed, task, path, item).
  const std::vector<ItemId>& neighbors(RelationType task, std::size_t path_index, ItemId item) {
    const std::uint64_t key = cache_key(task, path_index, item);
    auto it = neighbor_cache_.find(key);
    if (it == neighbor_cache_.end()) {
      Rng rng = derive_rng(sample_seed_, hash_str("expand"),
                           (static_cast<std::uint64_t>(task) << 32) | path_index, item);
      auto expanded =
          metapath_neighbors(graph_, item, paths(task)[path_index], cfg_.fanout_cap, rng);
      it = neighbor_cache_.emplace(key, std::move(expanded)).first;
    }
    return it->second;
  }

  // Node-level representation along one path; callers must ensure the item
  // has neighbors on that path.
  Var node_z(RelationType task, std::size_t path_index, ItemId item) {
    const std::uint64_t key = cache_key(task, path_index, item);
    auto it = z_cache_.find(key);
    if (it != z_cache_.end()) return it->second;
    const auto& nbs = neighbors(task, path_index, item);
    std::vector<Var> neighbor_hs;
    neighbor_hs.reserve(nbs.size());
    for (ItemId j : nbs) neighbor_hs.push_back(pooled_h(j));
    NodeAttentionResult res =
        node_level_attention(tape_, store_, task, path_index, pooled_h(item), neighbor_hs,
                             cfg_.node_heads);
    if (alpha_sink_) {
      for (auto& a : res.alphas) alpha_sink_->push_back(std::move(a));
    }
    z_cache_.emplace(key, res.out);
    return res.out;
  }

  Var behavior_p(RelationType task, ItemId item);
  Var content_q(RelationType task, ItemId item) {
    const std::uint64_t key = pair_key(task, item);
    auto it = q_cache_.find(key);
    if (it != q_cache_.end()) return it->second;
    Var q = encode_content_task(tape_, store_, provider_, item, task, cfg_.content_heads);
    q_cache_.emplace(key, q);
    return q;
  }

  void collect_attention(std::vector<Tensor>* alpha_sink, std::vector<Tensor>* beta_sink) {
    alpha_sink_ = alpha_sink;
    beta_sink_ = beta_sink;
  }

 private:
  friend TaskVarPair embed_item(EmbedContext& ctx, ItemId item);

  static std::uint64_t cache_key(RelationType task, std::size_t path_index, ItemId item) {
    return (static_cast<std::uint64_t>(task) << 48) | (static_cast<std::uint64_t>(path_index) << 40) |
           item;
  }
  static std::uint64_t pair_key(RelationType task, ItemId item) {
    return (static_cast<std::uint64_t>(task) << 48) | item;
  }

  Tape& tape_;
  const ParamStore& store_;
  const ModelConfig& cfg_;
  const RelGraph& graph_;
  const EmbeddingProvider& provider_;
  std::uint64_t sample_seed_;
  std::array<std::vector<MetaPath>, 2> paths_;

  std::unordered_map<ItemId, Var> h_cache_;
  std::unordered_map<std::uint64_t, std::vector<ItemId>> neighbor_cache_;
  std::unordered_map<std::uint64_t, Var> z_cache_;
  std::unordered_map<std::uint64_t, Var> q_cache_;
  std::unordered_map<std::uint64_t, Var> p_cache_;
  std::unordered_map<std::uint64_t, Var> a_cache_;
  std::unordered_map<ItemId, TaskVarPair> e_cache_;

  std::vector<Tensor>* alpha_sink_ = nullptr;
  std::vector<Tensor>* beta_sink_ = nullptr;
};

// Behavior representation p for one task: meta-paths with empty neighbor
// sets are dropped from the path-level softmax; when every path is empty the
// result is a learned linear transform of the pooled content vector. Path
// weights sum the representations of neighbors that themselves carry a
// defined z on the path (the center stands in when none do).
inline Var EmbedContext::behavior_p(RelationType task, ItemId item) {
  const std::uint64_t key = pair_key(task, item);
  auto it = p_cache_.find(key);
  if (it != p_cache_.end()) return it->second;

  const auto& task_paths = paths(task);
  std::vector<PathAttentionInput> inputs;
  for (std::size_t k = 0; k < task_paths.size(); ++k) {
    const auto& nbs = neighbors(task, k, item);
    if (nbs.empty()) continue;
    PathAttentionInput input;
    input.center_z = node_z(task, k, item);
    for (ItemId j : nbs) {
      if (!neighbors(task, k, j).empty()) input.neighbor_zs.push_back(node_z(task, k, j));
    }
    if (input.neighbor_zs.empty()) input.neighbor_zs.push_back(input.center_z);
    inputs.push_back(std::move(input));
  }

  Var p;
  if (inputs.empty()) {
    p = vec_mat(pooled_h(item), param(tape_, store_, names::fallback_w(task)));
  } else {
    PathAttentionResult res = path_level_attention(tape_, store_, task, inputs);
    if (beta_sink_) beta_sink_->push_back(res.beta);
    p = res.out;
  }
  p_cache_.emplace(key, p);
  return p;
}

// InfoNCE over a batch: positives are the second view of each anchor and
// negatives are the other anchors. By default the positive term joins the
// denominator, keeping the loss nonnegative; strict mode reproduces the
// printed form without it.
inline Var infonce_loss(const std::vector<Var>& anchors, const std::vector<Var>& positives,
                        double tau, bool strict = false) {
  if (anchors.size() < 2) throw UsageError("infonce_loss: need a batch of at least 2");
  if (anchors.size() != positives.size()) {
    throw UsageError("infonce_loss: anchor/positive counts differ");
  }
  if (tau <= 0.0) throw UsageError("infonce_loss: temperature must be positive");
  const double inv_tau = 1.0 / tau;
  const std::size_t n = anchors.size();

  // Cross-anchor similarities are symmetric; compute each pair once.
  std::vector<Var> cross(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      Var s = scale(cosine_sim(anchors[i], anchors[j]), inv_tau);
      cross[i * n + j] = s;
      cross[j * n + i] = s;
    }
  }

  Var total;
  for (std::size_t i = 0; i < n; ++i) {
    Var pos = scale(cosine_sim(anchors[i], positives[i]), inv_tau);
    std::vector<Var> denom;
    denom.reserve(n);
    if (!strict) denom.push_back(pos);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) denom.push_back(cross[i * n + j]);
    }
    Var loss_i = sub(logsumexp(concat_scalars(denom)), pos);
    total = total.defined() ? add(total, loss_i) : loss_i;
  }
  return scale(total, 1.0 / static_cast<double>(n));
}

struct SslResult {
  Var loss;                    // L_self = L_self_s + L_self_c
  std::vector<Tensor> view_a;  // p per item (s then c), for tests
  std::vector<Tensor> view_b;  // p' per item
};

// Self-supervised denoising pair: behavior representations from the intact
// graph against a graph-level-dropout view, same parameters and the same
// expansion seed, scored with InfoNCE per task and summed.
inline SslResult ssl_pair(EmbedContext& main_ctx, EmbedContext& perturbed_ctx,
                          const std::vector<ItemId>& batch, double tau, bool strict = false) {
  if (batch.empty()) throw UsageError("ssl_pair: empty batch");
  SslResult result;
  Var total;
  for (RelationType task : kRelations) {
    std::vector<Var> anchors, positives;
    anchors.reserve(batch.size());
    positives.reserve(batch.size());
    for (ItemId item : batch) {
      anchors.push_back(main_ctx.behavior_p(task, item));
      positives.push_back(perturbed_ctx.behavior_p(task, item));
      result.view_a.push_back(anchors.back().value());
      result.view_b.push_back(positives.back().value());
    }
    Var task_loss = infonce_loss(anchors, positives, tau, strict);
    total = total.defined() ? add(total, task_loss) : task_loss;
  }
  result.loss = total;
  return result;
}

}  // namespace mmsc
