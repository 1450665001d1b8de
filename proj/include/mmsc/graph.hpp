#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmsc/errors.hpp"
#include "mmsc/rng.hpp"

namespace mmsc {

using ItemId = std::uint32_t;

enum class RelationType : int { Substitutable = 0, Complementary = 1 };

inline constexpr std::array<RelationType, 2> kRelations{RelationType::Substitutable,
                                                        RelationType::Complementary};

inline const char* relation_name(RelationType r) {
  return r == RelationType::Substitutable ? "substitutable" : "complementary";
}

inline char relation_letter(RelationType r) {
  return r == RelationType::Substitutable ? 's' : 'c';
}

enum class Behavior { CoView, BuyAfterView, CoPurchase };

inline RelationType relation_of(Behavior b) {
  return b == Behavior::CoPurchase ? RelationType::Complementary : RelationType::Substitutable;
}

inline const char* behavior_name(Behavior b) {
  switch (b) {
    case Behavior::CoView: return "co_view";
    case Behavior::BuyAfterView: return "buy_after_view";
    case Behavior::CoPurchase: return "co_purchase";
  }
  return "";
}

struct EdgeRecord {
  ItemId src = 0;
  ItemId dst = 0;
  Behavior behavior = Behavior::CoView;

  RelationType relation() const { return relation_of(behavior); }
};

// Canonical undirected edge key: u < v.
struct EdgeKey {
  RelationType relation;
  ItemId u;
  ItemId v;

  friend auto operator<=>(const EdgeKey&, const EdgeKey&) = default;
};

inline EdgeKey make_edge_key(RelationType r, ItemId a, ItemId b) {
  return EdgeKey{r, std::min(a, b), std::max(a, b)};
}

// Typed relation sequence, length 1..3, e.g. "s.s.c".
class MetaPath {
 public:
  explicit MetaPath(std::vector<RelationType> hops) : hops_(std::move(hops)) {
    if (hops_.empty() || hops_.size() > 3) {
      throw ConfigError("meta-path length must be in [1, 3], got " + std::to_string(hops_.size()));
    }
  }

  static MetaPath parse(const std::string& text) {
    std::vector<RelationType> hops;
    std::istringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, '.')) {
      if (tok == "s") {
        hops.push_back(RelationType::Substitutable);
      } else if (tok == "c") {
        hops.push_back(RelationType::Complementary);
      } else {
        throw ConfigError("bad meta-path token '" + tok + "' in \"" + text + "\"");
      }
    }
    return MetaPath(std::move(hops));
  }

  const std::vector<RelationType>& hops() const { return hops_; }
  std::size_t length() const { return hops_.size(); }

  std::string str() const {
    std::string out;
    for (std::size_t i = 0; i < hops_.size(); ++i) {
      if (i) out += '.';
      out += relation_letter(hops_[i]);
    }
    return out;
  }

 private:
  std::vector<RelationType> hops_;
};

// Immutable heterogeneous item-item graph: symmetric sorted adjacency per
// relation, no self-loops, no duplicate (src, dst, relation) triples.
class RelGraph {
 public:
  RelGraph() = default;

  std::size_t item_count() const { return n_; }

  const std::vector<ItemId>& neighbors(RelationType r, ItemId item) const {
    check_item(item);
    return adj_[static_cast<int>(r)][item];
  }

  std::size_t degree(ItemId item) const {
    check_item(item);
    return adj_[0][item].size() + adj_[1][item].size();
  }

  std::size_t edge_count(RelationType r) const { return edge_counts_[static_cast<int>(r)]; }
  std::size_t edge_count() const { return edge_counts_[0] + edge_counts_[1]; }

  bool has_edge(RelationType r, ItemId a, ItemId b) const {
    check_item(a);
    check_item(b);
    const auto& nb = adj_[static_cast<int>(r)][a];
    return std::binary_search(nb.begin(), nb.end(), b);
  }

  // Undirected edges (u < v) in deterministic order.
  std::vector<EdgeKey> edges(RelationType r) const {
    std::vector<EdgeKey> out;
    out.reserve(edge_count(r));
    const auto& adj = adj_[static_cast<int>(r)];
    for (ItemId u = 0; u < n_; ++u) {
      for (ItemId v : adj[u]) {
        if (u < v) out.push_back(EdgeKey{r, u, v});
      }
    }
    return out;
  }

  std::vector<EdgeKey> all_edges() const {
    std::vector<EdgeKey> out = edges(RelationType::Substitutable);
    auto comp = edges(RelationType::Complementary);
    out.insert(out.end(), comp.begin(), comp.end());
    return out;
  }

  friend RelGraph build_graph(std::size_t n_items, const std::vector<EdgeRecord>& edges);
  friend RelGraph build_graph_from_keys(std::size_t n_items, const std::vector<EdgeKey>& keys);

 private:
  void check_item(ItemId item) const {
    if (item >= n_) {
      throw IndexError("item id " + std::to_string(item) + " out of range [0, " + std::to_string(n_) +
                       ")");
    }
  }

  std::size_t n_ = 0;
  std::array<std::vector<std::vector<ItemId>>, 2> adj_;
  std::array<std::size_t, 2> edge_counts_{0, 0};
};

inline RelGraph build_graph_from_keys(std::size_t n_items, const std::vector<EdgeKey>& keys) {
  RelGraph g;
  g.n_ = n_items;
  g.adj_[0].assign(n_items, {});
  g.adj_[1].assign(n_items, {});
  for (const auto& k : keys) {
    if (k.u >= n_items || k.v >= n_items) {
      throw IndexError("edge endpoint " + std::to_string(std::max(k.u, k.v)) + " out of range [0, " +
                       std::to_string(n_items) + ")");
    }
    if (k.u == k.v) throw IndexError("self-loop on item " + std::to_string(k.u) + " rejected");
    auto& a = g.adj_[static_cast<int>(k.relation)];
    a[k.u].push_back(k.v);
    a[k.v].push_back(k.u);
  }
  for (int r = 0; r < 2; ++r) {
    std::size_t count = 0;
    for (auto& nb : g.adj_[r]) {
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
      count += nb.size();
    }
    g.edge_counts_[r] = count / 2;
  }
  return g;
}

inline RelGraph build_graph(std::size_t n_items, const std::vector<EdgeRecord>& edges) {
  std::vector<EdgeKey> keys;
  keys.reserve(edges.size());
  for (const auto& e : edges) keys.push_back(make_edge_key(e.relation(), e.src, e.dst));
  return build_graph_from_keys(n_items, keys);
}

// Items reachable from `start` by following the path's relations in order.
// Each hop's frontier is deduplicated and uniformly subsampled down to
// `fanout_cap` when larger; the start item is excluded from the result.
inline std::vector<ItemId> metapath_neighbors(const RelGraph& g, ItemId start, const MetaPath& path,
                                              std::size_t fanout_cap, Rng& rng) {
  if (fanout_cap < 1) throw UsageError("metapath_neighbors: fanout_cap must be >= 1");
  std::vector<ItemId> frontier{start};
  for (RelationType hop : path.hops()) {
    std::set<ItemId> next;
    for (ItemId u : frontier) {
      const auto& nb = g.neighbors(hop, u);
      next.insert(nb.begin(), nb.end());
    }
    frontier.assign(next.begin(), next.end());
    if (frontier.size() > fanout_cap) {
      auto picks = rng.sample_indices(frontier.size(), fanout_cap);
      std::sort(picks.begin(), picks.end());
      std::vector<ItemId> sampled;
      sampled.reserve(fanout_cap);
      for (auto i : picks) sampled.push_back(frontier[i]);
      frontier = std::move(sampled);
    }
    if (frontier.empty()) break;
  }
  std::vector<ItemId> out;
  out.reserve(frontier.size());
  for (ItemId v : frontier) {
    if (v != start) out.push_back(v);
  }
  return out;
}

// Graph-level dropout: each undirected edge kept independently with
// probability 1 - drop_rate. The input graph is untouched.
inline RelGraph perturb(const RelGraph& g, double drop_rate, Rng& rng) {
  if (drop_rate < 0.0 || drop_rate > 1.0) {
    throw UsageError("perturb: drop_rate must be in [0, 1], got " + std::to_string(drop_rate));
  }
  std::vector<EdgeKey> kept;
  for (const auto& e : g.all_edges()) {
    if (!rng.bernoulli(drop_rate)) kept.push_back(e);
  }
  return build_graph_from_keys(g.item_count(), kept);
}

// n distinct items that are neither the anchor nor adjacent to it under the
// given relation, sampled uniformly from the eligible pool.
inline std::vector<ItemId> sample_negatives(const RelGraph& g, ItemId anchor, RelationType relation,
                                            std::size_t n, Rng& rng) {
  if (n < 1) throw UsageError("sample_negatives: n must be >= 1");
  const auto& nb = g.neighbors(relation, anchor);
  std::vector<ItemId> eligible;
  eligible.reserve(g.item_count());
  for (ItemId v = 0; v < g.item_count(); ++v) {
    if (v == anchor) continue;
    if (std::binary_search(nb.begin(), nb.end(), v)) continue;
    eligible.push_back(v);
  }
  if (eligible.size() < n) {
    throw SamplingPoolError("sample_negatives: pool of " + std::to_string(eligible.size()) +
                            " eligible items is smaller than n=" + std::to_string(n));
  }
  auto picks = rng.sample_indices(eligible.size(), n);
  std::vector<ItemId> out;
  out.reserve(n);
  for (auto i : picks) out.push_back(eligible[i]);
  return out;
}

// Equal-sized groups ordered by total degree (both relations), ties broken
// by item id; the first groups absorb the remainder.
inline std::vector<std::size_t> degree_groups(const RelGraph& g, std::size_t n_groups) {
  if (n_groups < 1) throw UsageError("degree_groups: n_groups must be >= 1");
  const std::size_t n = g.item_count();
  std::vector<ItemId> order(n);
  for (ItemId i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
    const auto da = g.degree(a), db = g.degree(b);
    return da != db ? da < db : a < b;
  });
  std::vector<std::size_t> group(n, 0);
  const std::size_t base = n / n_groups;
  const std::size_t rem = n % n_groups;
  std::size_t pos = 0;
  for (std::size_t gi = 0; gi < n_groups; ++gi) {
    const std::size_t sz = base + (gi < rem ? 1 : 0);
    for (std::size_t k = 0; k < sz && pos < n; ++k, ++pos) group[order[pos]] = gi;
  }
  return group;
}

// ---- edge file format ------------------------------------------------------
// Tab-separated `src<TAB>dst<TAB>behavior`, behavior in {co_view,
// buy_after_view, co_purchase}; '#' starts a comment line.

inline std::vector<EdgeRecord> read_edge_file(const std::string& path, std::size_t* max_id_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open edge file: " + path);
  std::vector<EdgeRecord> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t max_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string a, b, beh;
    if (!std::getline(ls, a, '\t') || !std::getline(ls, b, '\t') || !std::getline(ls, beh, '\t')) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected src<TAB>dst<TAB>behavior");
    }
    EdgeRecord e;
    try {
      e.src = static_cast<ItemId>(std::stoul(a));
      e.dst = static_cast<ItemId>(std::stoul(b));
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad item id");
    }
    if (beh == "co_view") {
      e.behavior = Behavior::CoView;
    } else if (beh == "buy_after_view") {
      e.behavior = Behavior::BuyAfterView;
    } else if (beh == "co_purchase") {
      e.behavior = Behavior::CoPurchase;
    } else {
      throw FormatError(path + ":" + std::to_string(line_no) + ": unknown behavior '" + beh + "'");
    }
    max_id = std::max({max_id, static_cast<std::size_t>(e.src), static_cast<std::size_t>(e.dst)});
    out.push_back(e);
  }
  if (max_id_out) *max_id_out = max_id;
  return out;
}

inline void write_edge_file(const std::string& path, const std::vector<EdgeRecord>& edges,
                            const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open edge file for writing: " + path);
  for (const auto& c : header_comments) out << "# " << c << "\n";
  for (const auto& e : edges) {
    out << e.src << "\t" << e.dst << "\t" << behavior_name(e.behavior) << "\n";
  }
  if (!out) throw FormatError("write failed: " + path);
}

}  // namespace mmsc
