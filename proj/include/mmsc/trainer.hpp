#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iostream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmsc/behavior.hpp"
#include "mmsc/errors.hpp"
#include "mmsc/eval.hpp"
#include "mmsc/fusion.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/judge.hpp"
#include "mmsc/model.hpp"
#include "mmsc/optim.hpp"
#include "mmsc/rng.hpp"
#include "mmsc/synth.hpp"

namespace mmsc {

struct TrainConfig {
  double learning_rate = 1e-3;  // paper grid {1e-4, 1e-3, 1e-2}
  double dropout = 0.2;         // graph-level edge dropout for the SSL view
  std::size_t negatives_per_positive = 5;
  double margin = 0.5;
  double tau = 0.1;
  double lambda = 0.005;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 60;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  std::size_t judge_budget = 600;
  double val_fraction = 0.05;
  std::size_t eval_negatives = 1000;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (dropout < 0.0 || dropout > 1.0) throw ConfigError("dropout must be in [0, 1]");
    if (negatives_per_positive < 1) throw ConfigError("negatives_per_positive must be >= 1");
    if (margin <= 0.0) throw ConfigError("margin must be positive");
    if (tau <= 0.0) throw ConfigError("tau must be positive");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    // judge_budget 0 disables augmentation entirely (the w/o E_LLM run)
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must be in [0, 1)");
    if (eval_negatives < 1) throw ConfigError("eval_negatives must be >= 1");
  }
};

// Judge-filtered positive pairs with provenance counts.
struct AugmentedEdgeSet {
  std::array<std::vector<EdgeKey>, 2> accepted;
  std::array<std::size_t, 2> submitted{0, 0};
  std::size_t judge_failures = 0;

  const std::vector<EdgeKey>& pairs(RelationType r) const {
    return accepted[static_cast<int>(r)];
  }
  std::size_t accepted_count() const { return accepted[0].size() + accepted[1].size(); }
  std::size_t submitted_count() const { return submitted[0] + submitted[1]; }
  double acceptance_rate() const {
    return submitted_count() == 0
               ? 0.0
               : static_cast<double>(accepted_count()) / static_cast<double>(submitted_count());
  }
};

// Samples up to `budget` edges uniformly (split evenly per relation), asks
// the judge, and keeps the approved pairs. Judge failures skip the pair.
inline AugmentedEdgeSet augment_edges(Judge& judge, const RelGraph& g,
                                      const MetadataCatalog& catalog, std::size_t budget, Rng& rng) {
  if (budget < 1) throw UsageError("augment_edges: budget must be >= 1");
  AugmentedEdgeSet out;
  const std::array<std::size_t, 2> share{budget - budget / 2, budget / 2};
  for (RelationType r : kRelations) {
    const int ri = static_cast<int>(r);
    const auto edges = g.edges(r);
    const std::size_t take = std::min(share[ri], edges.size());
    if (take == 0) continue;
    for (auto idx : rng.sample_indices(edges.size(), take)) {
      const EdgeKey& e = edges[idx];
      ++out.submitted[ri];
      try {
        if (judge.is_related(catalog.meta(e.u), catalog.meta(e.v), r)) {
          out.accepted[ri].push_back(e);
        }
      } catch (const JudgeError&) {
        ++out.judge_failures;
      }
    }
    std::sort(out.accepted[ri].begin(), out.accepted[ri].end());
  }
  return out;
}

// Hinge on cosine similarities: max(0, margin - s(anchor, pos) + s(anchor, neg)).
inline Var triplet_loss(const Var& anchor, const Var& pos, const Var& neg, double margin) {
  Var gap = sub(cosine_sim(anchor, neg), cosine_sim(anchor, pos));
  return relu(add_const(gap, margin));
}

struct PositiveSample {
  ItemId anchor = 0;
  ItemId positive = 0;
  RelationType relation = RelationType::Substitutable;
  std::vector<ItemId> negatives;
};

struct LossBreakdown {
  Var total;
  double triplet_s = 0.0;
  double triplet_c = 0.0;
  double self_supervised = 0.0;
};

// Multi-task objective over one batch: summed hinge terms per relation plus
// lambda times the self-supervised loss on the batch's anchor/positive
// items. With lambda == 0 the computation is the pure triplet sum.
inline LossBreakdown total_loss(EmbedContext& ctx, EmbedContext* perturbed_ctx,
                                const std::vector<PositiveSample>& batch, const ModelConfig& model,
                                const TrainConfig& cfg) {
  if (batch.empty()) throw UsageError("total_loss: empty batch");
  LossBreakdown out;
  std::array<Var, 2> triplet_sum;
  for (const auto& sample : batch) {
    const Var anchor = embed_item(ctx, sample.anchor).of(sample.relation);
    const Var positive = embed_item(ctx, sample.positive).of(sample.relation);
    for (ItemId neg : sample.negatives) {
      Var term =
          triplet_loss(anchor, positive, embed_item(ctx, neg).of(sample.relation), cfg.margin);
      Var& slot = triplet_sum[static_cast<int>(sample.relation)];
      slot = slot.defined() ? add(slot, term) : term;
    }
  }
  Var total;
  if (triplet_sum[0].defined()) {
    out.triplet_s = triplet_sum[0].value().item();
    total = triplet_sum[0];
  }
  if (triplet_sum[1].defined()) {
    out.triplet_c = triplet_sum[1].value().item();
    total = total.defined() ? add(total, triplet_sum[1]) : triplet_sum[1];
  }

  const bool use_ssl = cfg.lambda > 0.0 && !model.ablation.no_ssl && !model.ablation.no_behavior &&
                       perturbed_ctx != nullptr;
  if (use_ssl) {
    std::set<ItemId> items;
    for (const auto& sample : batch) {
      items.insert(sample.anchor);
      items.insert(sample.positive);
    }
    if (items.size() >= 2) {
      std::vector<ItemId> ssl_batch(items.begin(), items.end());
      SslResult ssl = ssl_pair(ctx, *perturbed_ctx, ssl_batch, cfg.tau, model.strict_infonce);
      out.self_supervised = ssl.loss.value().item();
      Var weighted = scale(ssl.loss, cfg.lambda);
      total = total.defined() ? add(total, weighted) : weighted;
    }
  }
  if (!total.defined()) throw UsageError("total_loss: batch produced no loss terms");
  out.total = total;
  return out;
}

// Expansion seed used for every forward pass of a fit/eval pipeline.
inline std::uint64_t expansion_seed(std::uint64_t seed) {
  return mix64(seed ^ hash_str("fit.expand"));
}

struct EpochLog {
  std::size_t epoch = 0;
  double triplet_s = 0.0;
  double triplet_c = 0.0;
  double self_supervised = 0.0;
  double val_h10_s = 0.0;
  double val_m10_s = 0.0;
  double val_h10_c = 0.0;
  double val_m10_c = 0.0;
};

inline std::string training_log_header() {
  return "epoch,L_triplet_s,L_triplet_c,L_self,val_H10_s,val_M10_s,val_H10_c,val_M10_c";
}

inline std::string format_log_row(const EpochLog& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", row.epoch,
                row.triplet_s, row.triplet_c, row.self_supervised, row.val_h10_s, row.val_m10_s,
                row.val_h10_c, row.val_m10_c);
  return buf;
}

struct FitResult {
  ParamStore params;
  std::vector<EpochLog> log;
  AugmentedEdgeSet augmented;
  bool used_raw_edges = false;  // judge rejected everything, fell back to E
  RelGraph train_graph;         // graph the encoder saw (validation removed)
  TestSet val_pairs;
  std::array<Metrics, 2> final_val;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
};

namespace detail {

// Validation metrics from forward-only embeddings of the full item set.
inline std::array<Metrics, 2> validation_metrics(const ModelConfig& model, const ParamStore& params,
                                                 const RelGraph& graph,
                                                 const EmbeddingProvider& provider,
                                                 const TestSet& val_pairs, std::uint64_t sample_seed) {
  const auto embeddings = embed_all_items(model, params, graph, provider, sample_seed);
  EvalReport report = evaluate(embeddings, val_pairs);
  return report.by_relation;
}

}  // namespace detail

// Epoch loop over judge-filtered positives: shuffled batches, per-positive
// negative resampling each epoch, adaptive-moment updates, early stop on
// held-out validation M@10, best parameters restored at the end.
using EpochObserver = std::function<void(const EpochLog&, const ParamStore&)>;

inline FitResult fit(const RelGraph& graph, const EmbeddingProvider& provider,
                     const ModelConfig& model, const TrainConfig& cfg, Judge* judge,
                     const GroundTruth* truth, std::ostream* progress = nullptr,
                     const EpochObserver& observer = {}) {
  model.validate();
  cfg.validate();
  if (graph.edge_count() == 0) throw ConfigError("fit: zero training edges");
  if (provider.item_count() < graph.item_count()) {
    throw ConfigError("fit: embedding file covers " + std::to_string(provider.item_count()) +
                      " items but the graph has " + std::to_string(graph.item_count()));
  }

  FitResult result;

  // Hold out a validation slice of the training edges per relation.
  std::set<EdgeKey> val_edges;
  Rng val_rng = derive_rng(cfg.seed, hash_str("fit.val_split"));
  for (RelationType r : kRelations) {
    const auto edges = graph.edges(r);
    if (edges.size() < 2) continue;
    const std::size_t want = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(edges.size())));
    for (auto idx : val_rng.sample_indices(edges.size(), want)) val_edges.insert(edges[idx]);
  }
  std::vector<EdgeKey> train_keys;
  for (const auto& e : graph.all_edges()) {
    if (!val_edges.count(e)) train_keys.push_back(e);
  }
  result.train_graph = build_graph_from_keys(graph.item_count(), train_keys);
  const RelGraph& train_graph = result.train_graph;
  if (train_graph.edge_count() == 0) throw ConfigError("fit: zero training edges after validation split");

  // Validation pairs ranked against fixed uniform negatives.
  const std::size_t n_items = graph.item_count();
  for (const auto& e : val_edges) {
    TestPair pair;
    pair.query = e.u;
    pair.positive = e.v;
    std::vector<ItemId> pool;
    pool.reserve(n_items - 2);
    for (ItemId v = 0; v < n_items; ++v) {
      if (v != e.u && v != e.v) pool.push_back(v);
    }
    const std::size_t take = std::min(cfg.eval_negatives, pool.size());
    for (auto idx : val_rng.sample_indices(pool.size(), take)) pair.negatives.push_back(pool[idx]);
    result.val_pairs.pairs(e.relation).push_back(std::move(pair));
  }

  // Judge-filtered positives; fall back to the raw edges when the judge
  // rejects everything or augmentation is ablated.
  MetadataCatalog catalog(n_items, truth);
  std::vector<PositiveSample> positives;
  if (judge != nullptr && !model.ablation.no_judge && cfg.judge_budget >= 1) {
    Rng judge_rng = derive_rng(cfg.seed, hash_str("fit.judge"));
    result.augmented = augment_edges(*judge, train_graph, catalog, cfg.judge_budget, judge_rng);
    for (RelationType r : kRelations) {
      for (const auto& e : result.augmented.pairs(r)) {
        positives.push_back(PositiveSample{e.u, e.v, r, {}});
      }
    }
    if (positives.empty()) {
      std::cerr << "warning: judge accepted no pairs, training on raw edges\n";
      result.used_raw_edges = true;
    }
  } else {
    result.used_raw_edges = true;
  }
  if (positives.empty()) {
    for (const auto& e : train_graph.all_edges()) {
      positives.push_back(PositiveSample{e.u, e.v, e.relation, {}});
    }
    result.used_raw_edges = true;
  }

  ParamStore params = init_params(model, cfg.seed);
  ParamStore best_params = params;
  double best_metric = -1.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_since_best = 0;

  const std::uint64_t sample_seed = expansion_seed(cfg.seed);
  const bool ssl_active = cfg.lambda > 0.0 && !model.ablation.no_ssl && !model.ablation.no_behavior;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng epoch_rng = derive_rng(cfg.seed, hash_str("fit.epoch"), epoch);
    std::vector<std::size_t> order(positives.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    epoch_rng.shuffle(order);

    EpochLog row;
    row.epoch = epoch;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<PositiveSample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        PositiveSample sample = positives[order[i]];
        if (epoch_rng.bernoulli(0.5)) std::swap(sample.anchor, sample.positive);
        sample.negatives = sample_negatives(train_graph, sample.anchor, sample.relation,
                                            cfg.negatives_per_positive, epoch_rng);
        batch.push_back(std::move(sample));
      }
      try {
        Tape tape;
        // Graph-level dropout acts on the training message graph itself:
        // each batch embeds against an independently perturbed view, so
        // positives must also be predictable without their direct edge.
        Rng view_rng = derive_rng(cfg.seed, hash_str("fit.view"), epoch, batch_index);
        RelGraph main_view = perturb(train_graph, cfg.dropout, view_rng);
        EmbedContext ctx(tape, params, model, main_view, provider, sample_seed);
        RelGraph perturbed;
        std::unique_ptr<EmbedContext> perturbed_ctx;
        if (ssl_active) {
          Rng drop_rng = derive_rng(cfg.seed, hash_str("fit.dropout"), epoch, batch_index);
          perturbed = perturb(train_graph, cfg.dropout, drop_rng);
          perturbed_ctx =
              std::make_unique<EmbedContext>(tape, params, model, perturbed, provider, sample_seed);
        }
        LossBreakdown loss = total_loss(ctx, perturbed_ctx.get(), batch, model, cfg);
        row.triplet_s += loss.triplet_s;
        row.triplet_c += loss.triplet_c;
        row.self_supervised += loss.self_supervised;
        GradMap grads = backward(tape, loss.total, params);
        adam_step(params, grads, cfg.learning_rate);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
    }

    const auto val = detail::validation_metrics(model, params, train_graph, provider,
                                                result.val_pairs, sample_seed);
    row.val_h10_s = val[0].h10;
    row.val_m10_s = val[0].mrr10;
    row.val_h10_c = val[1].h10;
    row.val_m10_c = val[1].mrr10;
    result.log.push_back(row);
    result.epochs_run = epoch;
    if (progress) *progress << format_log_row(row) << "\n";
    if (observer) observer(row, params);

    double metric = 0.0;
    std::size_t metric_parts = 0;
    if (val[0].queries > 0) {
      metric += val[0].mrr10;
      ++metric_parts;
    }
    if (val[1].queries > 0) {
      metric += val[1].mrr10;
      ++metric_parts;
    }
    if (metric_parts > 0) metric /= static_cast<double>(metric_parts);

    if (metric > best_metric + 1e-12) {
      best_metric = metric;
      best_params = params;
      best_epoch = epoch;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) break;
    }
  }

  result.params = std::move(best_params);
  result.best_epoch = best_epoch;
  result.final_val = detail::validation_metrics(model, result.params, train_graph, provider,
                                                result.val_pairs, sample_seed);
  return result;
}

}  // namespace mmsc
