#pragma once

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "mmsc/content.hpp"
#include "mmsc/errors.hpp"
#include "mmsc/eval.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/model.hpp"
#include "mmsc/rng.hpp"
#include "mmsc/synth.hpp"

namespace mmsc {

// Exact top-k cosine retrieval over the pooled content vectors of the items
// seen in training. Ties broken by lower item id.
class ContentIndex {
 public:
  ContentIndex(const EmbeddingProvider& provider, std::vector<ItemId> items)
      : items_(std::move(items)) {
    if (items_.empty()) throw UsageError("ContentIndex: no items");
    std::sort(items_.begin(), items_.end());
    vectors_.reserve(items_.size());
    for (ItemId item : items_) vectors_.push_back(provider.pooled(item));
  }

  std::size_t size() const { return items_.size(); }
  const std::vector<ItemId>& items() const { return items_; }

  // Top-k most content-similar training items; k larger than the index is
  // clamped with a warning.
  std::vector<ItemId> top_k(const Tensor& query, std::size_t k) const {
    if (k < 1) throw UsageError("ContentIndex: k must be >= 1");
    if (k > items_.size()) {
      std::cerr << "warning: top-k " << k << " clamped to index size " << items_.size() << "\n";
      k = items_.size();
    }
    std::vector<std::pair<double, ItemId>> scored;
    scored.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) {
      scored.push_back({cosine_value(query, vectors_[i]), items_[i]});
    }
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    std::vector<ItemId> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
    return out;
  }

 private:
  std::vector<ItemId> items_;
  std::vector<Tensor> vectors_;
};

// Inference for an unseen item: pool its content sequence, retrieve the
// top-k most similar training items, and mean-pool their stored final
// representations per task. Touches no trainable parameters.
inline TaskPair coldstart_embed(const Tensor& cold_sequence, const ContentIndex& index,
                                const std::vector<TaskPair>& final_embeddings, std::size_t k) {
  const Tensor query = EmbeddingProvider::pool_sequence(cold_sequence);
  const auto selected = index.top_k(query, k);
  const std::size_t d = final_embeddings[selected[0]].s_vec.size();
  Tensor s = Tensor::zeros({d});
  Tensor c = Tensor::zeros({d});
  for (ItemId item : selected) {
    if (item >= final_embeddings.size()) {
      throw CoverageError("coldstart_embed: no final embedding for item " + std::to_string(item));
    }
    const TaskPair& e = final_embeddings[item];
    for (std::size_t j = 0; j < d; ++j) {
      s(j) += e.s_vec(j);
      c(j) += e.c_vec(j);
    }
  }
  const double inv = 1.0 / static_cast<double>(selected.size());
  for (std::size_t j = 0; j < d; ++j) {
    s(j) *= inv;
    c(j) *= inv;
  }
  return TaskPair{std::move(s), std::move(c)};
}

struct ColdStartReport {
  EvalReport eval;
  std::size_t held_out_items = 0;
  std::size_t k = 0;
  double null_h10 = 0.0;  // expected H@10 of a random ranker on this protocol
};

// Ranks one ground-truth partner per cold item per relation against warm
// negatives, scoring with the mean-pooled cold representation.
inline ColdStartReport coldstart_evaluate(const std::vector<ItemId>& cold_items,
                                          const EmbeddingProvider& provider,
                                          const GroundTruth& truth,
                                          const std::vector<ItemId>& warm_items,
                                          const std::vector<TaskPair>& final_embeddings,
                                          std::size_t k, std::size_t n_negatives, Rng& rng) {
  if (cold_items.empty()) throw UsageError("coldstart_evaluate: no held-out items");
  ContentIndex index(provider, warm_items);
  std::vector<bool> is_cold(provider.item_count(), false);
  for (ItemId v : cold_items) is_cold[v] = true;

  ColdStartReport report;
  report.held_out_items = cold_items.size();
  report.k = std::min(k, warm_items.size());

  double null_acc = 0.0;
  std::size_t null_n = 0;
  for (RelationType r : kRelations) {
    const int ri = static_cast<int>(r);
    std::vector<std::size_t> ranks;
    for (ItemId cold : cold_items) {
      // Ground-truth partners that survived into the training set.
      std::vector<ItemId> partners;
      for (const auto& [u, v] : truth.pairs(r)) {
        if (u == cold && !is_cold[v]) partners.push_back(v);
        if (v == cold && !is_cold[u]) partners.push_back(u);
      }
      if (partners.empty()) continue;
      const ItemId positive = partners[rng.uniform_index(partners.size())];
      std::vector<ItemId> pool;
      for (ItemId w : warm_items) {
        if (w != positive) pool.push_back(w);
      }
      const std::size_t take = std::min(n_negatives, pool.size());
      const TaskPair cold_e = coldstart_embed(provider.sequence(cold), index, final_embeddings, k);
      std::vector<Tensor> negs;
      negs.reserve(take);
      for (auto idx : rng.sample_indices(pool.size(), take)) {
        negs.push_back(final_embeddings[pool[idx]].of(r));
      }
      ranks.push_back(rank_of_positive(cold_e.of(r), final_embeddings[positive].of(r), negs));
      null_acc += std::min(1.0, 10.0 / static_cast<double>(take + 1));
      ++null_n;
    }
    if (!ranks.empty()) {
      report.eval.by_relation[ri] = metrics_at_10(ranks);
      report.eval.ranks[ri] = std::move(ranks);
    }
  }
  if (null_n == 0) throw UsageError("coldstart_evaluate: no cold item has a warm ground-truth partner");
  report.null_h10 = null_acc / static_cast<double>(null_n);
  return report;
}

struct ColdStartRun {
  std::vector<ItemId> cold_items;
  std::vector<ItemId> warm_items;
  ColdStartReport report;
  ParamStore params;  // trained on the warm universe only
};

// Full cold-start pipeline: hold out a fraction of items, train in a
// reindexed warm-only universe (cold items contribute no edges, content, or
// negatives during training), then evaluate the held-out items by
// content-retrieval inference against the warm catalog.
template <typename FitFn>
ColdStartRun coldstart_pipeline(const RelGraph& graph, const EmbeddingProvider& provider,
                                const GroundTruth& truth, double holdout_fraction, std::size_t k,
                                std::size_t n_negatives, std::uint64_t seed, FitFn&& fit_warm) {
  const std::size_t n = graph.item_count();
  if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout fraction must be in (0, 1)");
  }
  Rng split_rng = derive_rng(seed, hash_str("coldstart.split"));
  const std::size_t n_cold = std::max<std::size_t>(
      1, static_cast<std::size_t>(holdout_fraction * static_cast<double>(n)));
  ColdStartRun run;
  std::vector<bool> is_cold(n, false);
  for (auto idx : split_rng.sample_indices(n, n_cold)) {
    run.cold_items.push_back(static_cast<ItemId>(idx));
    is_cold[idx] = true;
  }
  std::sort(run.cold_items.begin(), run.cold_items.end());
  for (ItemId i = 0; i < n; ++i) {
    if (!is_cold[i]) run.warm_items.push_back(i);
  }

  std::vector<ItemId> to_warm(n, 0);
  for (std::size_t w = 0; w < run.warm_items.size(); ++w) {
    to_warm[run.warm_items[w]] = static_cast<ItemId>(w);
  }
  std::vector<EdgeKey> warm_edges;
  for (const auto& e : graph.all_edges()) {
    if (!is_cold[e.u] && !is_cold[e.v]) {
      warm_edges.push_back(EdgeKey{e.relation, to_warm[e.u], to_warm[e.v]});
    }
  }
  RelGraph warm_graph = build_graph_from_keys(run.warm_items.size(), warm_edges);
  std::vector<Tensor> warm_seqs;
  for (ItemId w : run.warm_items) warm_seqs.push_back(provider.sequence(w));
  EmbeddingProvider warm_provider(std::move(warm_seqs), provider.seq_len(), provider.dim());
  GroundTruth warm_truth;
  warm_truth.cluster_of.resize(run.warm_items.size());
  for (std::size_t w = 0; w < run.warm_items.size(); ++w) {
    warm_truth.cluster_of[w] = truth.cluster_of[run.warm_items[w]];
  }
  for (RelationType r : kRelations) {
    for (const auto& [u, v] : truth.pairs(r)) {
      if (is_cold[u] || is_cold[v]) continue;
      auto key = ordered_pair(to_warm[u], to_warm[v]);
      if (r == RelationType::Substitutable) {
        warm_truth.substitutable_pairs.insert(key);
      } else {
        warm_truth.complementary_pairs.insert(key);
      }
    }
  }

  // Caller-provided training on the warm universe.
  std::vector<TaskPair> warm_finals;
  run.params = fit_warm(warm_graph, warm_provider, warm_truth, &warm_finals);

  std::vector<TaskPair> finals(n);
  for (std::size_t w = 0; w < run.warm_items.size(); ++w) {
    finals[run.warm_items[w]] = warm_finals[w];
  }
  Rng eval_rng = derive_rng(seed, hash_str("coldstart.eval"));
  run.report = coldstart_evaluate(run.cold_items, provider, truth, run.warm_items, finals, k,
                                  n_negatives, eval_rng);
  return run;
}

}  // namespace mmsc
