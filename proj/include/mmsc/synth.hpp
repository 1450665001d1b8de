#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmsc/errors.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/rng.hpp"
#include "mmsc/tensor.hpp"

namespace mmsc {

struct SynthConfig {
  std::size_t n_clusters = 50;
  std::size_t items_per_cluster = 10;
  double intra_sub_prob = 0.5;
  std::size_t cluster_pairing_degree = 2;
  // Complementary candidates between paired clusters: 0 pairs every item
  // with the whole partner cluster; a positive value plants item-level
  // co-complementary blocks (the g-th block of one cluster with the g-th
  // block of the other), the way real accessories attach to specific
  // product families rather than to a whole category.
  std::size_t complementary_block_size = 0;
  double noise_ratio = 0.0;
  std::size_t embed_dim = 16;
  double embed_noise_std = 0.4;
  double zipf_exponent = 1.1;
  std::uint64_t seed = 1;

  std::size_t item_count() const { return n_clusters * items_per_cluster; }

  void validate() const {
    if (n_clusters < 1 || items_per_cluster < 1) throw ConfigError("cluster counts must be >= 1");
    if (intra_sub_prob < 0.0 || intra_sub_prob > 1.0) {
      throw ConfigError("intra_sub_prob must be in [0, 1]");
    }
    if (noise_ratio < 0.0) throw ConfigError("noise_ratio must be >= 0");
    if (embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
    if (embed_noise_std < 0.0) throw ConfigError("embed_noise_std must be >= 0");
    if (zipf_exponent < 0.0) throw ConfigError("zipf_exponent must be >= 0");
    if (item_count() < 4) throw ConfigError("need at least 4 items total");
    if (cluster_pairing_degree >= 1 && n_clusters < 2) {
      throw ConfigError("complementary pairing requires at least 2 clusters");
    }
    if (cluster_pairing_degree > n_clusters - 1) {
      throw ConfigError("cluster_pairing_degree exceeds available clusters");
    }
  }
};

using PairSet = std::set<std::pair<ItemId, ItemId>>;

inline std::pair<ItemId, ItemId> ordered_pair(ItemId a, ItemId b) {
  return {std::min(a, b), std::max(a, b)};
}

// Planted semantic structure: cluster membership defines which pairs are
// truly substitutable (same cluster) or complementary (paired clusters),
// independent of which edges the sampler realized. Activity weights are the
// per-item Zipf draws behind the heavy-tailed degrees.
struct GroundTruth {
  std::vector<std::size_t> cluster_of;
  PairSet substitutable_pairs;
  PairSet complementary_pairs;
  std::vector<double> activity;

  bool is_true_pair(RelationType r, ItemId a, ItemId b) const {
    const auto key = ordered_pair(a, b);
    return r == RelationType::Substitutable ? substitutable_pairs.count(key) != 0
                                            : complementary_pairs.count(key) != 0;
  }

  const PairSet& pairs(RelationType r) const {
    return r == RelationType::Substitutable ? substitutable_pairs : complementary_pairs;
  }
};

// Scale applied to the geometric mean of two activity weights before it
// tempers the edge probability; clamped at 1 so the most active pairs see
// the base probability unchanged.
inline constexpr double kActivityScale = 70.0;

// Probability that a candidate pair materializes as an edge: the base
// probability tempered per pair through the endpoints' activity weights, so
// low-activity items participate in few edges and degrees come out
// heavy-tailed. Exact at the endpoints (base 0 and 1) for any weights.
inline double planted_pair_probability(double base_prob, double activity_a, double activity_b) {
  if (base_prob <= 0.0) return 0.0;
  if (base_prob >= 1.0) return 1.0;
  const double mean = std::min(1.0, kActivityScale * std::sqrt(activity_a * activity_b));
  return std::pow(base_prob, 1.0 / mean);
}

// Cluster pairing with each cluster joined to `cluster_pairing_degree`
// others: ring offsets supply partners two at a time, and an odd degree adds
// the half-rotation matching (degree 1 is a perfect matching for even
// cluster counts).
inline std::vector<std::pair<std::size_t, std::size_t>> paired_clusters(const SynthConfig& cfg) {
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  const std::size_t n = cfg.n_clusters;
  auto insert = [&](std::size_t a, std::size_t b) {
    if (a != b) pairs.insert({std::min(a, b), std::max(a, b)});
  };
  for (std::size_t step = 1; step <= cfg.cluster_pairing_degree / 2; ++step) {
    for (std::size_t k = 0; k < n; ++k) insert(k, (k + step) % n);
  }
  if (cfg.cluster_pairing_degree % 2 == 1) {
    for (std::size_t k = 0; k < n; ++k) insert(k, (k + n / 2) % n);
  }
  return {pairs.begin(), pairs.end()};
}

inline std::pair<RelGraph, GroundTruth> generate_planted_graph(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.item_count();

  GroundTruth truth;
  truth.cluster_of.resize(n);
  for (std::size_t i = 0; i < n; ++i) truth.cluster_of[i] = i / cfg.items_per_cluster;

  // Zipf activity: random rank permutation, weight rank^-exponent in (0, 1].
  Rng rank_rng = derive_rng(cfg.seed, hash_str("synth.ranks"));
  std::vector<std::size_t> ranks(n);
  for (std::size_t i = 0; i < n; ++i) ranks[i] = i + 1;
  rank_rng.shuffle(ranks);
  truth.activity.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth.activity[i] = std::pow(static_cast<double>(ranks[i]), -cfg.zipf_exponent);
  }

  std::vector<EdgeKey> edges;
  Rng sub_rng = derive_rng(cfg.seed, hash_str("synth.sub_edges"));
  for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
    const ItemId lo = static_cast<ItemId>(c * cfg.items_per_cluster);
    const ItemId hi = static_cast<ItemId>(lo + cfg.items_per_cluster);
    for (ItemId i = lo; i < hi; ++i) {
      for (ItemId j = i + 1; j < hi; ++j) {
        truth.substitutable_pairs.insert({i, j});
        const double p = planted_pair_probability(cfg.intra_sub_prob, truth.activity[i],
                                                  truth.activity[j]);
        if (sub_rng.bernoulli(p)) edges.push_back(EdgeKey{RelationType::Substitutable, i, j});
      }
    }
  }

  Rng comp_rng = derive_rng(cfg.seed, hash_str("synth.comp_edges"));
  const std::size_t block =
      cfg.complementary_block_size == 0 ? cfg.items_per_cluster : cfg.complementary_block_size;
  for (const auto& [ca, cb] : paired_clusters(cfg)) {
    const ItemId alo = static_cast<ItemId>(ca * cfg.items_per_cluster);
    const ItemId blo = static_cast<ItemId>(cb * cfg.items_per_cluster);
    for (ItemId i = alo; i < alo + cfg.items_per_cluster; ++i) {
      for (ItemId j = blo; j < blo + cfg.items_per_cluster; ++j) {
        if ((i - alo) / block != (j - blo) / block) continue;
        truth.complementary_pairs.insert(ordered_pair(i, j));
        const double p = planted_pair_probability(cfg.intra_sub_prob, truth.activity[i],
                                                  truth.activity[j]);
        if (comp_rng.bernoulli(p)) {
          edges.push_back(make_edge_key(RelationType::Complementary, i, j));
        }
      }
    }
  }

  return {build_graph_from_keys(n, edges), std::move(truth)};
}

// A perturbed copy of a graph that remembers which edges were injected, so
// sweeps can report exact training-edge precision.
struct NoisyGraph {
  RelGraph graph;
  std::vector<EdgeKey> noise_edges;
  std::size_t original_edge_count = 0;

  double edge_precision() const {
    const double total = static_cast<double>(original_edge_count + noise_edges.size());
    return total == 0.0 ? 1.0 : static_cast<double>(original_edge_count) / total;
  }
};

// Adds floor(ratio * |E|) edges uniformly over pairs that are neither
// existing edges nor ground-truth pairs, with uniformly chosen relation.
inline NoisyGraph inject_noise(const RelGraph& g, const GroundTruth& truth, double ratio, Rng& rng) {
  if (ratio < 0.0) throw UsageError("inject_noise: ratio must be >= 0");
  NoisyGraph out;
  out.original_edge_count = g.edge_count();
  const std::size_t want = static_cast<std::size_t>(ratio * static_cast<double>(g.edge_count()));
  std::vector<EdgeKey> edges = g.all_edges();
  if (want == 0) {
    out.graph = build_graph_from_keys(g.item_count(), edges);
    return out;
  }

  std::vector<std::pair<ItemId, ItemId>> eligible;
  const std::size_t n = g.item_count();
  for (ItemId u = 0; u < n; ++u) {
    for (ItemId v = u + 1; v < n; ++v) {
      if (g.has_edge(RelationType::Substitutable, u, v)) continue;
      if (g.has_edge(RelationType::Complementary, u, v)) continue;
      if (truth.is_true_pair(RelationType::Substitutable, u, v)) continue;
      if (truth.is_true_pair(RelationType::Complementary, u, v)) continue;
      eligible.push_back({u, v});
    }
  }
  if (want > eligible.size()) {
    throw CapacityError("inject_noise: requested " + std::to_string(want) + " edges but only " +
                        std::to_string(eligible.size()) + " eligible pairs exist");
  }
  auto picks = rng.sample_indices(eligible.size(), want);
  for (auto idx : picks) {
    const auto [u, v] = eligible[idx];
    const RelationType r =
        rng.bernoulli(0.5) ? RelationType::Substitutable : RelationType::Complementary;
    const EdgeKey key{r, u, v};
    edges.push_back(key);
    out.noise_edges.push_back(key);
  }
  out.graph = build_graph_from_keys(n, edges);
  return out;
}

// Per-cluster unit-norm centroid plus per-position Gaussian noise. Values
// are rounded through float so the binary embedding format round-trips
// bit-exactly. Sequence length is fixed at 4 positions.
inline constexpr std::size_t kSynthSeqLen = 4;

inline std::vector<Tensor> generate_embeddings(const GroundTruth& truth, const SynthConfig& cfg,
                                               Rng& rng) {
  if (cfg.embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
  std::size_t n_clusters = 0;
  for (auto c : truth.cluster_of) n_clusters = std::max(n_clusters, c + 1);

  std::vector<std::vector<double>> centroids(n_clusters);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    std::vector<double> v(cfg.embed_dim);
    double norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    centroids[c] = std::move(v);
  }

  std::vector<Tensor> out;
  out.reserve(truth.cluster_of.size());
  for (std::size_t i = 0; i < truth.cluster_of.size(); ++i) {
    const auto& centroid = centroids[truth.cluster_of[i]];
    std::vector<double> data(kSynthSeqLen * cfg.embed_dim);
    for (std::size_t s = 0; s < kSynthSeqLen; ++s) {
      for (std::size_t dimi = 0; dimi < cfg.embed_dim; ++dimi) {
        const double v = centroid[dimi] + cfg.embed_noise_std * rng.normal();
        data[s * cfg.embed_dim + dimi] = static_cast<double>(static_cast<float>(v));
      }
    }
    out.push_back(Tensor::matrix(kSynthSeqLen, cfg.embed_dim, std::move(data)));
  }
  return out;
}

// ---- ground-truth file -----------------------------------------------------
// Tab-separated, '#' comments:
//   item<TAB>id<TAB>cluster
//   pair<TAB>s|c<TAB>u<TAB>v

inline void write_ground_truth(const std::string& path, const GroundTruth& truth,
                               const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open ground-truth file for writing: " + path);
  for (const auto& c : header_comments) out << "# " << c << "\n";
  for (std::size_t i = 0; i < truth.cluster_of.size(); ++i) {
    out << "item\t" << i << "\t" << truth.cluster_of[i] << "\n";
  }
  for (const auto& [u, v] : truth.substitutable_pairs) out << "pair\ts\t" << u << "\t" << v << "\n";
  for (const auto& [u, v] : truth.complementary_pairs) out << "pair\tc\t" << u << "\t" << v << "\n";
  if (!out) throw FormatError("write failed: " + path);
}

inline GroundTruth read_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open ground-truth file: " + path);
  GroundTruth truth;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    std::getline(ls, kind, '\t');
    try {
      if (kind == "item") {
        std::string id, cluster;
        if (!std::getline(ls, id, '\t') || !std::getline(ls, cluster, '\t')) {
          throw FormatError("");
        }
        const std::size_t idx = std::stoul(id);
        if (truth.cluster_of.size() <= idx) truth.cluster_of.resize(idx + 1, 0);
        truth.cluster_of[idx] = std::stoul(cluster);
      } else if (kind == "pair") {
        std::string rel, a, b;
        if (!std::getline(ls, rel, '\t') || !std::getline(ls, a, '\t') || !std::getline(ls, b, '\t')) {
          throw FormatError("");
        }
        const auto key = ordered_pair(static_cast<ItemId>(std::stoul(a)),
                                      static_cast<ItemId>(std::stoul(b)));
        if (rel == "s") {
          truth.substitutable_pairs.insert(key);
        } else if (rel == "c") {
          truth.complementary_pairs.insert(key);
        } else {
          throw FormatError("");
        }
      } else {
        throw FormatError("");
      }
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad ground-truth record");
    }
  }
  return truth;
}

}  // namespace mmsc
