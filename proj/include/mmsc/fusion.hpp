#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmsc/autograd.hpp"
#include "mmsc/behavior.hpp"
#include "mmsc/errors.hpp"
#include "mmsc/model.hpp"
#include "mmsc/optim.hpp"

namespace mmsc {

// Neural gate a = g (.) primary + (1 - g) (.) secondary with
// g = sigmoid(W1 primary + W2 secondary + b). Output coordinates always lie
// between the two inputs.
inline Var gated_fusion(Tape& tape, const ParamStore& store, const Var& primary,
                        const Var& secondary, const std::string& w1_name,
                        const std::string& w2_name, const std::string& b_name) {
  const Tensor& p = primary.value();
  const Tensor& q = secondary.value();
  if (p.rank() != 1 || q.rank() != 1 || p.size() != q.size()) {
    throw DimensionError("gated_fusion: incompatible shapes " + shape_str(p.shape()) + " and " +
                         shape_str(q.shape()));
  }
  Var w1 = param(tape, store, w1_name);
  Var w2 = param(tape, store, w2_name);
  Var b = param(tape, store, b_name);
  Var g = sigmoid(add(add(vec_mat(primary, w1), vec_mat(secondary, w2)), b));
  Var ones = tape.constant(Tensor::full(p.shape(), 1.0));
  return add(mul(g, primary), mul(sub(ones, g), secondary));
}

// Semantic-level gate fusing the behavior representation p (g side) with the
// content representation q for one task.
inline Var semantic_gate(Tape& tape, const ParamStore& store, RelationType task, const Var& q,
                         const Var& p) {
  return gated_fusion(tape, store, p, q, names::gate_w1("sem", task), names::gate_w2("sem", task),
                      names::gate_b("sem", task));
}

// Task-level gate: each task's output takes its own representation on the
// g side and the sibling task's as the secondary operand.
inline TaskVarPair task_gate(Tape& tape, const ParamStore& store, const Var& a_s, const Var& a_c) {
  TaskVarPair out;
  out.s_vec = gated_fusion(tape, store, a_s, a_c, names::gate_w1("task", RelationType::Substitutable),
                           names::gate_w2("task", RelationType::Substitutable),
                           names::gate_b("task", RelationType::Substitutable));
  out.c_vec = gated_fusion(tape, store, a_c, a_s, names::gate_w1("task", RelationType::Complementary),
                           names::gate_w2("task", RelationType::Complementary),
                           names::gate_b("task", RelationType::Complementary));
  return out;
}

// Full pipeline for one item: content encoding, behavior encoding, semantic
// gate per task, then the task gate. Ablation flags replace stages with
// pass-throughs.
inline TaskVarPair embed_item(EmbedContext& ctx, ItemId item) {
  auto cached = ctx.e_cache_.find(item);
  if (cached != ctx.e_cache_.end()) return cached->second;

  const AblationFlags& ablate = ctx.config().ablation;
  Var a_by_task[2];
  for (RelationType task : kRelations) {
    Var a;
    if (ablate.no_behavior) {
      a = ctx.content_q(task, item);
    } else if (ablate.no_content) {
      a = ctx.behavior_p(task, item);
    } else {
      Var q = ctx.content_q(task, item);
      Var p = ctx.behavior_p(task, item);
      a = semantic_gate(ctx.tape(), ctx.store(), task, q, p);
    }
    a_by_task[static_cast<int>(task)] = a;
  }

  TaskVarPair e;
  if (ablate.no_task_gate) {
    e.s_vec = a_by_task[0];
    e.c_vec = a_by_task[1];
  } else {
    e = task_gate(ctx.tape(), ctx.store(), a_by_task[0], a_by_task[1]);
  }
  ctx.e_cache_.emplace(item, e);
  return e;
}

// Forward-only final representations for every item; used by evaluation,
// validation, and the cold-start index.
inline std::vector<TaskPair> embed_all_items(const ModelConfig& cfg, const ParamStore& store,
                                             const RelGraph& graph,
                                             const EmbeddingProvider& provider,
                                             std::uint64_t sample_seed) {
  Tape tape;
  tape.set_grad_enabled(false);
  EmbedContext ctx(tape, store, cfg, graph, provider, sample_seed);
  std::vector<TaskPair> out;
  out.reserve(graph.item_count());
  for (ItemId item = 0; item < graph.item_count(); ++item) {
    out.push_back(embed_item(ctx, item).values());
  }
  return out;
}

}  // namespace mmsc
