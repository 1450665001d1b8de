#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmsc/errors.hpp"
#include "mmsc/fusion.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/judge.hpp"
#include "mmsc/model.hpp"
#include "mmsc/rng.hpp"

namespace mmsc {

inline double cosine_value(const Tensor& u, const Tensor& v) {
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uu += u(i) * u(i);
    vv += v(i) * v(i);
    uv += u(i) * v(i);
  }
  if (uu == 0.0 || vv == 0.0) throw DegenerateInputError("cosine: zero-norm embedding");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

struct TestPair {
  ItemId query = 0;
  ItemId positive = 0;
  std::vector<ItemId> negatives;
};

struct TestSet {
  std::array<std::vector<TestPair>, 2> by_relation;
  std::size_t negatives_requested = 1000;

  const std::vector<TestPair>& pairs(RelationType r) const {
    return by_relation[static_cast<int>(r)];
  }
  std::vector<TestPair>& pairs(RelationType r) { return by_relation[static_cast<int>(r)]; }
  bool empty() const { return by_relation[0].empty() && by_relation[1].empty(); }
};

struct TestSplit {
  RelGraph train_graph;
  TestSet test;
  std::size_t judged = 0;
  std::size_t rejected = 0;
  std::size_t judge_failures = 0;
};

// Holds out one judge-approved edge per item per relation where available,
// removes them from the training graph, and samples the negatives each
// query is ranked against (all non-positives when the universe is small).
inline TestSplit build_test_set(const RelGraph& g, Judge& judge, const MetadataCatalog& catalog,
                                Rng& rng, std::size_t n_negatives = 1000) {
  for (RelationType r : kRelations) {
    if (g.edge_count(r) == 0) {
      throw UsageError(std::string("build_test_set: graph has no ") + relation_name(r) + " edges");
    }
  }
  TestSplit split;
  split.test.negatives_requested = n_negatives;
  std::set<EdgeKey> held_out;
  const std::size_t n = g.item_count();
  for (RelationType r : kRelations) {
    for (ItemId item = 0; item < n; ++item) {
      std::vector<ItemId> candidates;
      for (ItemId nb : g.neighbors(r, item)) {
        if (!held_out.count(make_edge_key(r, item, nb))) candidates.push_back(nb);
      }
      if (candidates.empty()) continue;
      const ItemId partner = candidates[rng.uniform_index(candidates.size())];
      ++split.judged;
      bool verdict = false;
      try {
        verdict = judge.is_related(catalog.meta(item), catalog.meta(partner), r);
      } catch (const JudgeError&) {
        ++split.judge_failures;
        continue;
      }
      if (!verdict) {
        ++split.rejected;
        continue;
      }
      held_out.insert(make_edge_key(r, item, partner));
      TestPair pair;
      pair.query = item;
      pair.positive = partner;
      // Uniform negatives excluding the query and the positive.
      std::vector<ItemId> pool;
      pool.reserve(n - 2);
      for (ItemId v = 0; v < n; ++v) {
        if (v != item && v != partner) pool.push_back(v);
      }
      const std::size_t take = std::min(n_negatives, pool.size());
      for (auto idx : rng.sample_indices(pool.size(), take)) pair.negatives.push_back(pool[idx]);
      split.test.pairs(r).push_back(std::move(pair));
    }
  }
  std::vector<EdgeKey> kept;
  for (const auto& e : g.all_edges()) {
    if (!held_out.count(e)) kept.push_back(e);
  }
  split.train_graph = build_graph_from_keys(n, kept);
  if (split.test.empty()) {
    std::cerr << "warning: judge rejected every candidate, test set is empty\n";
  }
  return split;
}

// 1-based rank of the positive among the negatives by cosine score; ties
// count against the positive.
inline std::size_t rank_of_positive(const Tensor& query_e, const Tensor& positive_e,
                                    const std::vector<Tensor>& negative_es) {
  if (negative_es.empty()) throw UsageError("rank_of_positive: no negatives");
  const double pos_score = cosine_value(query_e, positive_e);
  std::size_t rank = 1;
  for (const auto& neg : negative_es) {
    if (cosine_value(query_e, neg) >= pos_score) ++rank;
  }
  return rank;
}

struct Metrics {
  double h10 = 0.0;
  double mrr10 = 0.0;
  double ndcg10 = 0.0;
  std::size_t queries = 0;
};

// Single-relevant-item top-10 metrics.
inline Metrics metrics_at_10(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw UsageError("metrics_at_10: empty rank list");
  Metrics m;
  m.queries = ranks.size();
  for (std::size_t rank : ranks) {
    if (rank < 1) throw UsageError("metrics_at_10: ranks are 1-based");
    if (rank <= 10) {
      m.h10 += 1.0;
      m.mrr10 += 1.0 / static_cast<double>(rank);
      m.ndcg10 += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }
  const double n = static_cast<double>(ranks.size());
  m.h10 /= n;
  m.mrr10 /= n;
  m.ndcg10 /= n;
  return m;
}

struct EvalReport {
  std::array<Metrics, 2> by_relation;
  std::array<std::vector<std::size_t>, 2> ranks;

  const Metrics& metrics(RelationType r) const { return by_relation[static_cast<int>(r)]; }
};

// Scores realized as cosine over the final task embeddings.
inline EvalReport evaluate(const std::vector<TaskPair>& embeddings, const TestSet& test) {
  std::set<ItemId> unknown;
  auto check = [&](ItemId id) {
    if (id >= embeddings.size()) unknown.insert(id);
  };
  for (RelationType r : kRelations) {
    for (const auto& pair : test.pairs(r)) {
      check(pair.query);
      check(pair.positive);
      for (ItemId v : pair.negatives) check(v);
    }
  }
  if (!unknown.empty()) {
    std::ostringstream os;
    os << "evaluate: items unknown to the model:";
    for (ItemId id : unknown) os << ' ' << id;
    throw CoverageError(os.str());
  }

  EvalReport report;
  for (RelationType r : kRelations) {
    const int ri = static_cast<int>(r);
    for (const auto& pair : test.pairs(r)) {
      const Tensor& q = embeddings[pair.query].of(r);
      const Tensor& p = embeddings[pair.positive].of(r);
      std::vector<Tensor> negs;
      negs.reserve(pair.negatives.size());
      for (ItemId v : pair.negatives) negs.push_back(embeddings[v].of(r));
      report.ranks[ri].push_back(rank_of_positive(q, p, negs));
    }
    if (!report.ranks[ri].empty()) {
      report.by_relation[ri] = metrics_at_10(report.ranks[ri]);
    }
  }
  return report;
}

struct GroupMetrics {
  std::size_t group = 0;
  Metrics metrics;
};

struct DegreeGroupReport {
  std::size_t n_groups = 0;
  std::array<std::vector<GroupMetrics>, 2> by_relation;
};

// Metrics per query-item degree group; groups partition the test queries so
// weighted per-group metrics recompose the overall numbers exactly.
inline DegreeGroupReport degree_group_report(const RelGraph& g,
                                             const std::vector<TaskPair>& embeddings,
                                             const TestSet& test, std::size_t n_groups = 10) {
  if (test.empty()) throw UsageError("degree_group_report: empty test set");
  const auto groups = degree_groups(g, n_groups);
  DegreeGroupReport report;
  report.n_groups = n_groups;
  for (RelationType r : kRelations) {
    const int ri = static_cast<int>(r);
    std::vector<std::vector<std::size_t>> ranks_per_group(n_groups);
    for (const auto& pair : test.pairs(r)) {
      const Tensor& q = embeddings[pair.query].of(r);
      const Tensor& p = embeddings[pair.positive].of(r);
      std::vector<Tensor> negs;
      negs.reserve(pair.negatives.size());
      for (ItemId v : pair.negatives) negs.push_back(embeddings[v].of(r));
      ranks_per_group[groups[pair.query]].push_back(rank_of_positive(q, p, negs));
    }
    for (std::size_t gi = 0; gi < n_groups; ++gi) {
      GroupMetrics gm;
      gm.group = gi;
      if (!ranks_per_group[gi].empty()) gm.metrics = metrics_at_10(ranks_per_group[gi]);
      report.by_relation[ri].push_back(gm);
    }
  }
  return report;
}

// ---- test-set file ----------------------------------------------------------
// `relation<TAB>query<TAB>positive<TAB>neg,neg,...` with '#' comments.

inline void write_test_set(const std::string& path, const TestSet& test,
                           const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open test-set file for writing: " + path);
  for (const auto& c : header_comments) out << "# " << c << "\n";
  for (RelationType r : kRelations) {
    for (const auto& pair : test.pairs(r)) {
      out << relation_letter(r) << "\t" << pair.query << "\t" << pair.positive << "\t";
      for (std::size_t i = 0; i < pair.negatives.size(); ++i) {
        if (i) out << ',';
        out << pair.negatives[i];
      }
      out << "\n";
    }
  }
  if (!out) throw FormatError("write failed: " + path);
}

inline TestSet read_test_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open test-set file: " + path);
  TestSet test;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string rel, query, positive, negs;
    if (!std::getline(ls, rel, '\t') || !std::getline(ls, query, '\t') ||
        !std::getline(ls, positive, '\t') || !std::getline(ls, negs, '\t')) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad test-set record");
    }
    RelationType r;
    if (rel == "s") {
      r = RelationType::Substitutable;
    } else if (rel == "c") {
      r = RelationType::Complementary;
    } else {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad relation '" + rel + "'");
    }
    TestPair pair;
    try {
      pair.query = static_cast<ItemId>(std::stoul(query));
      pair.positive = static_cast<ItemId>(std::stoul(positive));
      std::istringstream ns(negs);
      std::string tok;
      while (std::getline(ns, tok, ',')) {
        pair.negatives.push_back(static_cast<ItemId>(std::stoul(tok)));
      }
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad item id");
    }
    test.pairs(r).push_back(std::move(pair));
  }
  return test;
}

}  // namespace mmsc
