#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "mmsc/content.hpp"
#include "mmsc/eval.hpp"
#include "mmsc/synth.hpp"

using namespace mmsc;

namespace {

SynthConfig tiny_config() {
  SynthConfig cfg;
  cfg.n_clusters = 2;
  cfg.items_per_cluster = 2;
  cfg.intra_sub_prob = 1.0;
  cfg.cluster_pairing_degree = 1;
  cfg.seed = 7;
  return cfg;
}

// Least-squares SSE of log(count) against either log(degree) (power form)
// or degree (exponential form), fitted from the histogram mode upward.
double tail_fit_sse(const std::map<std::size_t, std::size_t>& hist, bool log_x) {
  std::size_t mode = 1, mode_count = 0;
  for (const auto& [k, c] : hist) {
    if (k >= 1 && c > mode_count) {
      mode = k;
      mode_count = c;
    }
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto& [k, c] : hist) {
    if (k < mode) continue;
    const double x = log_x ? std::log(static_cast<double>(k)) : static_cast<double>(k);
    const double y = std::log(static_cast<double>(c));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  const double b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double a = (sy - b * sx) / n;
  double sse = 0;
  for (const auto& [k, c] : hist) {
    if (k < mode) continue;
    const double x = log_x ? std::log(static_cast<double>(k)) : static_cast<double>(k);
    const double e = std::log(static_cast<double>(c)) - (a + b * x);
    sse += e * e;
  }
  return sse;
}

}  // namespace

TEST(PlantedGraph, ProbabilityOneRealizesEveryPair) {
  auto [g, truth] = generate_planted_graph(tiny_config());
  // Clusters {0,1} and {2,3}: intra pairs substitutable, cross complementary.
  EXPECT_TRUE(g.has_edge(RelationType::Substitutable, 0, 1));
  EXPECT_TRUE(g.has_edge(RelationType::Substitutable, 2, 3));
  for (ItemId i : {0, 1}) {
    for (ItemId j : {2, 3}) EXPECT_TRUE(g.has_edge(RelationType::Complementary, i, j));
  }
  EXPECT_EQ(g.edge_count(RelationType::Substitutable), 2u);
  EXPECT_EQ(g.edge_count(RelationType::Complementary), 4u);
}

TEST(PlantedGraph, ProbabilityZeroRealizesNothing) {
  SynthConfig cfg = tiny_config();
  cfg.intra_sub_prob = 0.0;
  auto [g, truth] = generate_planted_graph(cfg);
  EXPECT_EQ(g.edge_count(), 0u);
  EXPECT_EQ(truth.substitutable_pairs.size(), 2u);  // semantics independent of realization
}

TEST(PlantedGraph, DegenerateConfigRejected) {
  SynthConfig cfg;
  cfg.n_clusters = 1;
  cfg.items_per_cluster = 8;
  cfg.cluster_pairing_degree = 1;
  EXPECT_THROW(generate_planted_graph(cfg), ConfigError);
}

TEST(PlantedGraph, TruthInvariants) {
  SynthConfig cfg;
  cfg.n_clusters = 6;
  cfg.items_per_cluster = 5;
  cfg.intra_sub_prob = 0.6;
  cfg.cluster_pairing_degree = 2;
  cfg.seed = 3;
  auto [g, truth] = generate_planted_graph(cfg);
  const auto pairs = paired_clusters(cfg);
  std::set<std::pair<std::size_t, std::size_t>> paired(pairs.begin(), pairs.end());
  for (const auto& [u, v] : truth.substitutable_pairs) {
    EXPECT_EQ(truth.cluster_of[u], truth.cluster_of[v]);
  }
  for (const auto& [u, v] : truth.complementary_pairs) {
    const auto cu = truth.cluster_of[u], cv = truth.cluster_of[v];
    EXPECT_NE(cu, cv);
    EXPECT_TRUE(paired.count({std::min(cu, cv), std::max(cu, cv)}));
  }
  // Every realized edge is a ground-truth pair of its relation.
  for (RelationType r : kRelations) {
    for (const auto& e : g.edges(r)) EXPECT_TRUE(truth.is_true_pair(r, e.u, e.v));
  }
}

TEST(PlantedGraph, StatisticalOracleAtBenchmarkScale) {
  SynthConfig cfg;  // the 50x10, prob 0.5 benchmark
  cfg.seed = 1;
  auto [g, truth] = generate_planted_graph(cfg);

  // Poisson-binomial count bound per relation, expectation computed
  // analytically from the public pair-probability formula.
  for (RelationType r : kRelations) {
    double mu = 0.0, var = 0.0;
    for (const auto& [u, v] : truth.pairs(r)) {
      const double p =
          planted_pair_probability(cfg.intra_sub_prob, truth.activity[u], truth.activity[v]);
      mu += p;
      var += p * (1.0 - p);
    }
    const double count = static_cast<double>(g.edge_count(r));
    EXPECT_NEAR(count, mu, 4.0 * std::sqrt(var)) << relation_name(r);
  }

  // Heavy-tailed degrees: from the histogram mode on, a power-law fit
  // explains the tail better than an exponential fit.
  std::map<std::size_t, std::size_t> hist;
  for (ItemId i = 0; i < g.item_count(); ++i) ++hist[g.degree(i)];
  EXPECT_LT(tail_fit_sse(hist, /*log_x=*/true), tail_fit_sse(hist, /*log_x=*/false));
}

TEST(PlantedGraph, SameSeedIsByteIdentical) {
  SynthConfig cfg;
  cfg.n_clusters = 10;
  cfg.items_per_cluster = 8;
  cfg.seed = 99;
  auto [g1, t1] = generate_planted_graph(cfg);
  auto [g2, t2] = generate_planted_graph(cfg);
  EXPECT_EQ(g1.all_edges(), g2.all_edges());
  EXPECT_EQ(t1.cluster_of, t2.cluster_of);
  EXPECT_EQ(t1.activity, t2.activity);
  EXPECT_EQ(t1.substitutable_pairs, t2.substitutable_pairs);

  Rng e1 = derive_rng(cfg.seed, hash_str("embeddings"));
  Rng e2 = derive_rng(cfg.seed, hash_str("embeddings"));
  auto s1 = generate_embeddings(t1, cfg, e1);
  auto s2 = generate_embeddings(t2, cfg, e2);
  ASSERT_EQ(s1.size(), s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_EQ(s1[i].data(), s2[i].data());
}

TEST(InjectNoise, RatioZeroIsIdentity) {
  SynthConfig cfg;
  cfg.n_clusters = 5;
  cfg.items_per_cluster = 6;
  cfg.seed = 11;
  auto [g, truth] = generate_planted_graph(cfg);
  Rng rng(1);
  NoisyGraph noisy = inject_noise(g, truth, 0.0, rng);
  EXPECT_EQ(noisy.graph.all_edges(), g.all_edges());
  EXPECT_TRUE(noisy.noise_edges.empty());
  EXPECT_DOUBLE_EQ(noisy.edge_precision(), 1.0);
}

TEST(InjectNoise, FullRatioDoublesEdges) {
  SynthConfig cfg;
  cfg.n_clusters = 10;
  cfg.items_per_cluster = 6;
  cfg.intra_sub_prob = 0.5;
  cfg.seed = 4;
  auto [g, truth] = generate_planted_graph(cfg);
  const std::size_t base = g.edge_count();
  ASSERT_GT(base, 0u);
  Rng rng(2);
  NoisyGraph noisy = inject_noise(g, truth, 1.0, rng);
  EXPECT_EQ(noisy.graph.edge_count(), 2 * base);
  EXPECT_EQ(noisy.noise_edges.size(), base);
  EXPECT_DOUBLE_EQ(noisy.edge_precision(), 0.5);
}

TEST(InjectNoise, InjectedEdgesAvoidGroundTruth) {
  SynthConfig cfg;
  cfg.n_clusters = 8;
  cfg.items_per_cluster = 6;
  cfg.intra_sub_prob = 0.4;
  cfg.seed = 21;
  auto [g, truth] = generate_planted_graph(cfg);
  Rng rng(3);
  NoisyGraph noisy = inject_noise(g, truth, 0.2, rng);
  for (const auto& e : noisy.noise_edges) {
    EXPECT_FALSE(truth.is_true_pair(RelationType::Substitutable, e.u, e.v));
    EXPECT_FALSE(truth.is_true_pair(RelationType::Complementary, e.u, e.v));
    EXPECT_FALSE(g.has_edge(RelationType::Substitutable, e.u, e.v));
    EXPECT_FALSE(g.has_edge(RelationType::Complementary, e.u, e.v));
  }
  const double expected =
      static_cast<double>(g.edge_count()) /
      static_cast<double>(g.edge_count() + noisy.noise_edges.size());
  EXPECT_DOUBLE_EQ(noisy.edge_precision(), expected);
}

TEST(InjectNoise, CapacityErrorWhenFull) {
  auto [g, truth] = generate_planted_graph(tiny_config());
  Rng rng(5);
  // All candidate pairs are ground-truth pairs in the tiny config.
  EXPECT_THROW(inject_noise(g, truth, 1.0, rng), CapacityError);
}

TEST(Embeddings, ZeroNoiseCollapsesClusters) {
  SynthConfig cfg = tiny_config();
  cfg.embed_noise_std = 0.0;
  cfg.embed_dim = 8;
  auto [g, truth] = generate_planted_graph(cfg);
  Rng rng(6);
  auto seqs = generate_embeddings(truth, cfg, rng);
  EXPECT_EQ(seqs[0].data(), seqs[1].data());  // same cluster
  EXPECT_EQ(seqs[2].data(), seqs[3].data());
  EXPECT_NE(seqs[0].data(), seqs[2].data());
  // All positions equal the unit-norm centroid.
  const Tensor pooled = EmbeddingProvider::pool_sequence(seqs[0]);
  double norm = 0.0;
  for (std::size_t j = 0; j < pooled.size(); ++j) norm += pooled(j) * pooled(j);
  EXPECT_NEAR(norm, 1.0, 1e-5);
}

TEST(Embeddings, ZeroNoiseCrossClusterCosineEqualsCentroidCosine) {
  SynthConfig cfg = tiny_config();
  cfg.embed_noise_std = 0.0;
  cfg.embed_dim = 8;
  auto [g, truth] = generate_planted_graph(cfg);
  Rng rng(8);
  auto seqs = generate_embeddings(truth, cfg, rng);
  const Tensor a = EmbeddingProvider::pool_sequence(seqs[0]);
  const Tensor b = EmbeddingProvider::pool_sequence(seqs[2]);
  // Centroids are the pooled vectors themselves at zero noise, so the
  // cross-cluster cosine is exactly the centroid cosine.
  const double cab = cosine_value(a, b);
  const double c01 = cosine_value(EmbeddingProvider::pool_sequence(seqs[1]), b);
  EXPECT_NEAR(cab, c01, 1e-12);
}

TEST(Embeddings, IntraClusterCosineExceedsInterCluster) {
  SynthConfig cfg;
  cfg.n_clusters = 6;
  cfg.items_per_cluster = 8;
  cfg.embed_dim = 16;
  cfg.embed_noise_std = 0.1;
  cfg.seed = 10;
  auto [g, truth] = generate_planted_graph(cfg);
  Rng rng(10);
  auto seqs = generate_embeddings(truth, cfg, rng);
  std::vector<Tensor> pooled;
  for (const auto& s : seqs) pooled.push_back(EmbeddingProvider::pool_sequence(s));
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t j = i + 1; j < pooled.size(); ++j) {
      const double c = cosine_value(pooled[i], pooled[j]);
      if (truth.cluster_of[i] == truth.cluster_of[j]) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  }
  EXPECT_GT(intra / static_cast<double>(n_intra), inter / static_cast<double>(n_inter));
}

TEST(GroundTruthFile, RoundTrip) {
  SynthConfig cfg;
  cfg.n_clusters = 4;
  cfg.items_per_cluster = 3;
  cfg.intra_sub_prob = 0.7;
  cfg.seed = 13;
  auto [g, truth] = generate_planted_graph(cfg);
  const std::string path = ::testing::TempDir() + "truth_roundtrip.tsv";
  write_ground_truth(path, truth, {"seed = 13"});
  GroundTruth loaded = read_ground_truth(path);
  EXPECT_EQ(loaded.cluster_of, truth.cluster_of);
  EXPECT_EQ(loaded.substitutable_pairs, truth.substitutable_pairs);
  EXPECT_EQ(loaded.complementary_pairs, truth.complementary_pairs);
}
