#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mmsc/behavior.hpp"
#include "mmsc/fusion.hpp"
#include "mmsc/model.hpp"
#include "mmsc/synth.hpp"

using namespace mmsc;

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> data(n);
  for (auto& v : data) v = 2.0 * rng.uniform_real() - 1.0;
  return Tensor(shape, std::move(data));
}

ModelConfig small_model(std::size_t d = 6) {
  ModelConfig cfg;
  cfg.dim = d;
  cfg.content_heads = 2;
  cfg.node_heads = 2;
  cfg.seq_len = 2;
  cfg.fanout_cap = 64;
  return cfg;
}

EmbeddingProvider random_provider(std::size_t n_items, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> seqs;
  for (std::size_t i = 0; i < n_items; ++i) seqs.push_back(random_tensor(rng, {2, d}));
  return EmbeddingProvider(std::move(seqs), 2, d);
}

// Straight-line reference for one node-level attention evaluation.
Tensor reference_node_attention(const ParamStore& store, RelationType task, std::size_t path_index,
                                const Tensor& center, const std::vector<Tensor>& neighbors,
                                std::size_t n_heads) {
  const std::size_t d = center.size();
  std::vector<double> concat;
  for (std::size_t u = 0; u < n_heads; ++u) {
    const Tensor& w = store.value(names::node_attn(task, path_index, u));
    std::vector<double> scores(neighbors.size());
    double mx = -1e300;
    for (std::size_t j = 0; j < neighbors.size(); ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < d; ++k) acc += w(k) * center(k) + w(d + k) * neighbors[j](k);
      scores[j] = acc > 0 ? acc : 0.01 * acc;  // leaky relu
      mx = std::max(mx, scores[j]);
    }
    double denom = 0;
    for (double s : scores) denom += std::exp(s - mx);
    std::vector<double> mixed(d, 0.0);
    for (std::size_t j = 0; j < neighbors.size(); ++j) {
      const double alpha = std::exp(scores[j] - mx) / denom;
      for (std::size_t k = 0; k < d; ++k) mixed[k] += alpha * neighbors[j](k);
    }
    const Tensor& proj = store.value(names::node_proj(task, u));
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0;
      for (std::size_t k = 0; k < d; ++k) acc += mixed[k] * proj(k, c);
      concat.push_back(acc > 0 ? acc : std::expm1(acc));  // elu
    }
  }
  const Tensor& mix = store.value(names::node_mix(task));
  Tensor out = Tensor::zeros({d});
  for (std::size_t c = 0; c < d; ++c) {
    double acc = 0;
    for (std::size_t k = 0; k < concat.size(); ++k) acc += concat[k] * mix(k, c);
    out(c) = acc;
  }
  return out;
}

// Straight-line reference for the path-level softmax combination.
std::pair<Tensor, std::vector<double>> reference_path_attention(
    const ParamStore& store, RelationType task, const std::vector<Tensor>& centers,
    const std::vector<std::vector<Tensor>>& neighbor_zs) {
  const Tensor& wb = store.value(names::path_wb(task));
  const Tensor& bias = store.value(names::path_bias(task));
  const Tensor& score = store.value(names::path_score(task));
  const std::size_t d = wb.size();
  std::vector<double> weights;
  for (const auto& zs : neighbor_zs) {
    double w = 0;
    for (const auto& z : zs) {
      for (std::size_t k = 0; k < d; ++k) w += score(k) * std::tanh(wb(k) * z(k) + bias(k));
    }
    weights.push_back(w);
  }
  double mx = -1e300;
  for (double w : weights) mx = std::max(mx, w);
  double denom = 0;
  for (double w : weights) denom += std::exp(w - mx);
  std::vector<double> beta;
  for (double w : weights) beta.push_back(std::exp(w - mx) / denom);
  Tensor out = Tensor::zeros({d});
  for (std::size_t k = 0; k < centers.size(); ++k) {
    for (std::size_t c = 0; c < d; ++c) out(c) += beta[k] * centers[k](c);
  }
  return {out, beta};
}

}  // namespace

TEST(NodeAttention, SingletonSoftmax) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 1);
  Rng rng(2);
  Tensor center = random_tensor(rng, {cfg.dim});
  Tensor neighbor = random_tensor(rng, {cfg.dim});
  Tape tape;
  auto res = node_level_attention(tape, store, RelationType::Substitutable, 0,
                                  tape.constant(center), {tape.constant(neighbor)}, cfg.node_heads);
  for (const auto& alpha : res.alphas) {
    ASSERT_EQ(alpha.size(), 1u);
    EXPECT_DOUBLE_EQ(alpha(0), 1.0);
  }
  Tensor expected = reference_node_attention(store, RelationType::Substitutable, 0, center,
                                             {neighbor}, cfg.node_heads);
  for (std::size_t c = 0; c < cfg.dim; ++c) EXPECT_NEAR(res.out.value()(c), expected(c), 1e-12);
}

TEST(NodeAttention, IdenticalNeighborsCollapse) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 3);
  Rng rng(4);
  Tensor center = random_tensor(rng, {cfg.dim});
  Tensor neighbor = random_tensor(rng, {cfg.dim});
  Tape tape;
  Var c = tape.constant(center);
  Var n = tape.constant(neighbor);
  auto single = node_level_attention(tape, store, RelationType::Substitutable, 0, c, {n},
                                     cfg.node_heads);
  auto triple = node_level_attention(tape, store, RelationType::Substitutable, 0, c, {n, n, n},
                                     cfg.node_heads);
  for (std::size_t k = 0; k < cfg.dim; ++k) {
    EXPECT_NEAR(single.out.value()(k), triple.out.value()(k), 1e-12);
  }
}

TEST(NodeAttention, MatchesIndependentReference) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 5);
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor center = random_tensor(rng, {cfg.dim});
    std::vector<Tensor> neighbors;
    std::vector<Var> neighbor_vars;
    Tape tape;
    for (int j = 0; j < 3; ++j) neighbors.push_back(random_tensor(rng, {cfg.dim}));
    for (const auto& n : neighbors) neighbor_vars.push_back(tape.constant(n));
    auto res = node_level_attention(tape, store, RelationType::Complementary, 1,
                                    tape.constant(center), neighbor_vars, cfg.node_heads);
    Tensor expected = reference_node_attention(store, RelationType::Complementary, 1, center,
                                               neighbors, cfg.node_heads);
    for (std::size_t c = 0; c < cfg.dim; ++c) EXPECT_NEAR(res.out.value()(c), expected(c), 1e-10);
    for (const auto& alpha : res.alphas) {
      double s = 0;
      for (std::size_t j = 0; j < alpha.size(); ++j) {
        EXPECT_GE(alpha(j), 0.0);
        s += alpha(j);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(NodeAttention, EmptyNeighborsRejected) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 7);
  Tape tape;
  Var center = tape.constant(Tensor::full({cfg.dim}, 0.5));
  EXPECT_THROW(node_level_attention(tape, store, RelationType::Substitutable, 0, center, {},
                                    cfg.node_heads),
               UsageError);
}

TEST(NodeAttention, NeighborOrderInvariance) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 9);
  Rng rng(10);
  Tensor center = random_tensor(rng, {cfg.dim});
  std::vector<Tensor> neighbors;
  for (int j = 0; j < 4; ++j) neighbors.push_back(random_tensor(rng, {cfg.dim}));
  auto run = [&](const std::vector<std::size_t>& order) {
    Tape tape;
    std::vector<Var> vars;
    for (auto idx : order) vars.push_back(tape.constant(neighbors[idx]));
    return node_level_attention(tape, store, RelationType::Substitutable, 2, tape.constant(center),
                                vars, cfg.node_heads)
        .out.value();
  };
  const Tensor a = run({0, 1, 2, 3});
  const Tensor b = run({3, 1, 0, 2});
  for (std::size_t c = 0; c < cfg.dim; ++c) EXPECT_NEAR(a(c), b(c), 1e-12);
}

TEST(PathAttention, SingletonSoftmax) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 11);
  Rng rng(12);
  Tensor z = random_tensor(rng, {cfg.dim});
  Tape tape;
  PathAttentionInput input;
  input.center_z = tape.constant(z);
  input.neighbor_zs = {tape.constant(random_tensor(rng, {cfg.dim}))};
  auto res = path_level_attention(tape, store, RelationType::Substitutable, {input});
  ASSERT_EQ(res.beta.size(), 1u);
  EXPECT_DOUBLE_EQ(res.beta(0), 1.0);
  for (std::size_t c = 0; c < cfg.dim; ++c) EXPECT_NEAR(res.out.value()(c), z(c), 1e-12);
}

TEST(PathAttention, IdenticalPopulationsShareWeight) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 13);
  Rng rng(14);
  std::vector<Tensor> zs;
  for (int j = 0; j < 3; ++j) zs.push_back(random_tensor(rng, {cfg.dim}));
  Tape tape;
  PathAttentionInput a, b;
  a.center_z = tape.constant(random_tensor(rng, {cfg.dim}));
  b.center_z = tape.constant(random_tensor(rng, {cfg.dim}));
  for (const auto& z : zs) {
    a.neighbor_zs.push_back(tape.constant(z));
    b.neighbor_zs.push_back(tape.constant(z));
  }
  auto res = path_level_attention(tape, store, RelationType::Complementary, {a, b});
  ASSERT_EQ(res.beta.size(), 2u);
  EXPECT_NEAR(res.beta(0), 0.5, 1e-12);
  EXPECT_NEAR(res.beta(1), 0.5, 1e-12);
}

TEST(PathAttention, MatchesIndependentReference) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 15);
  Rng rng(16);
  std::vector<Tensor> centers;
  std::vector<std::vector<Tensor>> neighbor_zs;
  Tape tape;
  std::vector<PathAttentionInput> inputs;
  for (int k = 0; k < 3; ++k) {
    PathAttentionInput input;
    centers.push_back(random_tensor(rng, {cfg.dim}));
    input.center_z = tape.constant(centers.back());
    std::vector<Tensor> zs;
    for (int j = 0; j < 2 + k; ++j) zs.push_back(random_tensor(rng, {cfg.dim}));
    for (const auto& z : zs) input.neighbor_zs.push_back(tape.constant(z));
    neighbor_zs.push_back(zs);
    inputs.push_back(std::move(input));
  }
  auto res = path_level_attention(tape, store, RelationType::Substitutable, inputs);
  auto [expected, beta] = reference_path_attention(store, RelationType::Substitutable, centers,
                                                   neighbor_zs);
  double beta_sum = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(res.beta(k), beta[k], 1e-10);
    beta_sum += res.beta(k);
  }
  EXPECT_NEAR(beta_sum, 1.0, 1e-9);
  for (std::size_t c = 0; c < cfg.dim; ++c) EXPECT_NEAR(res.out.value()(c), expected(c), 1e-10);
}

TEST(PathAttention, EmptyPathListRejected) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 17);
  Tape tape;
  EXPECT_THROW(path_level_attention(tape, store, RelationType::Substitutable, {}), UsageError);
}

TEST(Infonce, FrozenAnalyticValues) {
  // Batch of 2 with identical views and orthogonal cross pairs at tau = 1:
  // per-item loss is -log(e / (e + 1)) = log1p(exp(-1)).
  Tape tape;
  std::vector<Var> anchors{tape.constant(Tensor::vector({1, 0})),
                           tape.constant(Tensor::vector({0, 1}))};
  std::vector<Var> positives = anchors;
  const double got = infonce_loss(anchors, positives, 1.0).value().item();
  EXPECT_NEAR(got, std::log1p(std::exp(-1.0)), 1e-12);

  // Positives orthogonal to anchors while the negative equals the anchor:
  // per-item loss is -log(1 / (1 + e)) = log1p(exp(1)).
  Tape tape2;
  std::vector<Var> a2{tape2.constant(Tensor::vector({1, 0})),
                      tape2.constant(Tensor::vector({1, 0}))};
  std::vector<Var> p2{tape2.constant(Tensor::vector({0, 1})),
                      tape2.constant(Tensor::vector({0, 1}))};
  const double got2 = infonce_loss(a2, p2, 1.0).value().item();
  EXPECT_NEAR(got2, std::log1p(std::exp(1.0)), 1e-12);
}

TEST(Infonce, NonnegativeAndVanishesInSeparationLimit) {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    std::vector<Var> anchors, positives;
    const std::size_t batch = 2 + rng.uniform_index(4);
    for (std::size_t i = 0; i < batch; ++i) {
      anchors.push_back(tape.constant(random_tensor(rng, {5})));
      positives.push_back(tape.constant(random_tensor(rng, {5})));
    }
    EXPECT_GE(infonce_loss(anchors, positives, 0.5).value().item(), 0.0);
  }
  // Perfectly aligned positives, perfectly opposed anchors, small tau.
  Tape tape;
  std::vector<Var> anchors{tape.constant(Tensor::vector({1, 0})),
                           tape.constant(Tensor::vector({-1, 0}))};
  const double loss = infonce_loss(anchors, anchors, 0.05).value().item();
  EXPECT_NEAR(loss, 0.0, 1e-12);
}

TEST(Infonce, StrictModeReproducesPrintedForm) {
  Tape tape;
  std::vector<Var> anchors{tape.constant(Tensor::vector({1, 0})),
                           tape.constant(Tensor::vector({0, 1}))};
  const double strict = infonce_loss(anchors, anchors, 1.0, /*strict=*/true).value().item();
  // Denominator holds only the orthogonal negative: -log(e / e^0) = -1.
  EXPECT_NEAR(strict, -1.0, 1e-12);
}

TEST(Infonce, UsageErrors) {
  Tape tape;
  std::vector<Var> one{tape.constant(Tensor::vector({1, 0}))};
  EXPECT_THROW(infonce_loss(one, one, 1.0), UsageError);
  std::vector<Var> two{tape.constant(Tensor::vector({1, 0})),
                       tape.constant(Tensor::vector({0, 1}))};
  EXPECT_THROW(infonce_loss(two, two, 0.0), UsageError);
  EXPECT_THROW(infonce_loss(two, one, 1.0), UsageError);
}

TEST(EncodeBehavior, IsolatedItemUsesFallback) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 21);
  EmbeddingProvider provider = random_provider(4, cfg.dim, 22);
  RelGraph g = build_graph(4, {{1, 2, Behavior::CoView}});  // item 0 isolated
  Tape tape;
  EmbedContext ctx(tape, store, cfg, g, provider, 23);
  for (RelationType task : kRelations) {
    const Tensor& p = ctx.behavior_p(task, 0).value();
    const Tensor& h = provider.pooled(0);
    const Tensor& w = store.value(names::fallback_w(task));
    for (std::size_t c = 0; c < cfg.dim; ++c) {
      double acc = 0;
      for (std::size_t k = 0; k < cfg.dim; ++k) acc += h(k) * w(k, c);
      EXPECT_NEAR(p(c), acc, 1e-12);
    }
  }
}

TEST(EncodeBehavior, PerRelationEmptinessFallsBackPerTask) {
  ModelConfig cfg = small_model();
  cfg.metapaths_c = {"c"};
  ParamStore store = init_params(cfg, 25);
  EmbeddingProvider provider = random_provider(3, cfg.dim, 26);
  RelGraph g = build_graph(3, {{0, 1, Behavior::CoView}});  // substitutable only
  Tape tape;
  EmbedContext ctx(tape, store, cfg, g, provider, 27);
  const Tensor& pc = ctx.behavior_p(RelationType::Complementary, 0).value();
  const Tensor& h = provider.pooled(0);
  const Tensor& w = store.value(names::fallback_w(RelationType::Complementary));
  for (std::size_t c = 0; c < cfg.dim; ++c) {
    double acc = 0;
    for (std::size_t k = 0; k < cfg.dim; ++k) acc += h(k) * w(k, c);
    EXPECT_NEAR(pc(c), acc, 1e-12);
  }
  // The substitutable side is the attention output: with one neighbor whose
  // own path-neighborhood is also nonempty, p_s equals the path-level
  // combination rather than the fallback transform.
  const Tensor& ps = ctx.behavior_p(RelationType::Substitutable, 0).value();
  const Tensor& ws = store.value(names::fallback_w(RelationType::Substitutable));
  double diff = 0;
  for (std::size_t c = 0; c < cfg.dim; ++c) {
    double acc = 0;
    for (std::size_t k = 0; k < cfg.dim; ++k) acc += h(k) * ws(k, c);
    diff += std::abs(ps(c) - acc);
  }
  EXPECT_GT(diff, 1e-9);
}

TEST(EncodeBehavior, HandGraphMatchesCompositionOfOracles) {
  // Clusters {0,1,2} substitutable triangle, 0-3 complementary.
  ModelConfig cfg = small_model();
  cfg.metapaths_s = {"s", "s.s"};
  cfg.metapaths_c = {"c"};
  ParamStore store = init_params(cfg, 29);
  EmbeddingProvider provider = random_provider(4, cfg.dim, 30);
  RelGraph g = build_graph(4, {{0, 1, Behavior::CoView},
                               {1, 2, Behavior::CoView},
                               {0, 2, Behavior::CoView},
                               {0, 3, Behavior::CoPurchase}});
  Tape tape;
  EmbedContext ctx(tape, store, cfg, g, provider, 31);

  // Expected neighbor sets from exhaustive enumeration.
  // path "s" from 0: {1,2}; path "s.s" from 0: walks 0-1-{0,2}, 0-2-{0,1} -> {1,2}.
  const auto& n_s = ctx.neighbors(RelationType::Substitutable, 0, 0);
  EXPECT_EQ(n_s, (std::vector<ItemId>{1, 2}));
  const auto& n_ss = ctx.neighbors(RelationType::Substitutable, 1, 0);
  EXPECT_EQ(n_ss, (std::vector<ItemId>{1, 2}));

  auto ref_z = [&](std::size_t path_index, ItemId item,
                   const std::vector<ItemId>& nbs) {
    std::vector<Tensor> hs;
    for (ItemId j : nbs) hs.push_back(provider.pooled(j));
    return reference_node_attention(store, RelationType::Substitutable, path_index,
                                    provider.pooled(item), hs, cfg.node_heads);
  };
  // Node-level z for the center and neighbors along both paths, then the
  // path-level combination, all through the straight-line references.
  std::vector<Tensor> centers;
  std::vector<std::vector<Tensor>> neighbor_zs;
  for (std::size_t k = 0; k < 2; ++k) {
    centers.push_back(ref_z(k, 0, ctx.neighbors(RelationType::Substitutable, k, 0)));
    std::vector<Tensor> zs;
    for (ItemId j : ctx.neighbors(RelationType::Substitutable, k, 0)) {
      const auto& jn = ctx.neighbors(RelationType::Substitutable, k, j);
      if (!jn.empty()) zs.push_back(ref_z(k, j, jn));
    }
    neighbor_zs.push_back(zs);
  }
  auto [expected, beta] =
      reference_path_attention(store, RelationType::Substitutable, centers, neighbor_zs);
  const Tensor& got = ctx.behavior_p(RelationType::Substitutable, 0).value();
  for (std::size_t c = 0; c < cfg.dim; ++c) EXPECT_NEAR(got(c), expected(c), 1e-9);
}

TEST(EncodeBehavior, DeterministicAcrossTapes) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 33);
  SynthConfig synth;
  synth.n_clusters = 5;
  synth.items_per_cluster = 6;
  synth.embed_dim = cfg.dim;
  synth.seed = 34;
  auto [g, truth] = generate_planted_graph(synth);
  Rng erng(35);
  auto seqs = generate_embeddings(truth, synth, erng);
  EmbeddingProvider provider(std::move(seqs), kSynthSeqLen, cfg.dim);
  for (int rep = 0; rep < 2; ++rep) {
    Tape t1, t2;
    EmbedContext c1(t1, store, cfg, g, provider, 99);
    EmbedContext c2(t2, store, cfg, g, provider, 99);
    for (ItemId item = 0; item < 6; ++item) {
      const Tensor& a = c1.behavior_p(RelationType::Substitutable, item).value();
      const Tensor& b = c2.behavior_p(RelationType::Substitutable, item).value();
      EXPECT_EQ(a.data(), b.data());
    }
  }
}

TEST(SslPair, DropZeroGivesIdenticalViews) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 37);
  EmbeddingProvider provider = random_provider(6, cfg.dim, 38);
  RelGraph g = build_graph(6, {{0, 1, Behavior::CoView},
                               {1, 2, Behavior::CoView},
                               {3, 4, Behavior::CoPurchase},
                               {0, 5, Behavior::CoPurchase}});
  Tape tape;
  EmbedContext main_ctx(tape, store, cfg, g, provider, 40);
  Rng drop_rng(41);
  RelGraph perturbed = perturb(g, 0.0, drop_rng);
  EmbedContext pert_ctx(tape, store, cfg, perturbed, provider, 40);
  std::vector<ItemId> batch{0, 1, 3};
  SslResult res = ssl_pair(main_ctx, pert_ctx, batch, 0.5);
  ASSERT_EQ(res.view_a.size(), res.view_b.size());
  for (std::size_t i = 0; i < res.view_a.size(); ++i) {
    EXPECT_EQ(res.view_a[i].data(), res.view_b[i].data());
  }
  // With identical views every positive similarity is 1, the loss minimum
  // for this batch's cross similarities.
  EXPECT_GE(res.loss.value().item(), 0.0);
}

TEST(SslPair, DropOneGivesFallbackViews) {
  ModelConfig cfg = small_model();
  ParamStore store = init_params(cfg, 43);
  EmbeddingProvider provider = random_provider(5, cfg.dim, 44);
  RelGraph g = build_graph(5, {{0, 1, Behavior::CoView}, {2, 3, Behavior::CoPurchase}});
  Tape tape;
  EmbedContext main_ctx(tape, store, cfg, g, provider, 46);
  Rng drop_rng(47);
  RelGraph perturbed = perturb(g, 1.0, drop_rng);
  EmbedContext pert_ctx(tape, store, cfg, perturbed, provider, 46);
  std::vector<ItemId> batch{0, 2};
  SslResult res = ssl_pair(main_ctx, pert_ctx, batch, 0.5);
  // view_b holds s-task then c-task blocks; every entry is the fallback
  // transform of the pooled content vector.
  std::size_t idx = 0;
  for (RelationType task : kRelations) {
    const Tensor& w = store.value(names::fallback_w(task));
    for (ItemId item : batch) {
      const Tensor& h = provider.pooled(item);
      for (std::size_t c = 0; c < cfg.dim; ++c) {
        double acc = 0;
        for (std::size_t k = 0; k < cfg.dim; ++k) acc += h(k) * w(k, c);
        EXPECT_NEAR(res.view_b[idx](c), acc, 1e-12);
      }
      ++idx;
    }
  }
}

TEST(SslPair, GradientCheckUnderDropout) {
  ModelConfig cfg = small_model(4);
  cfg.metapaths_s = {"s", "s.s"};
  cfg.metapaths_c = {"c", "c.s"};
  EmbeddingProvider provider = random_provider(6, cfg.dim, 50);
  RelGraph g = build_graph(6, {{0, 1, Behavior::CoView},
                               {1, 2, Behavior::CoView},
                               {2, 3, Behavior::CoPurchase},
                               {4, 5, Behavior::CoPurchase},
                               {0, 4, Behavior::CoPurchase}});
  Rng drop_rng(51);
  RelGraph perturbed = perturb(g, 0.2, drop_rng);  // one fixed perturbed view
  std::vector<ItemId> batch{0, 1, 2, 4};
  ParamStore store = init_params(cfg, 52);
  auto model = [&](Tape& t, const ParamStore& s) {
    EmbedContext main_ctx(t, s, cfg, g, provider, 53);
    EmbedContext pert_ctx(t, s, cfg, perturbed, provider, 53);
    return ssl_pair(main_ctx, pert_ctx, batch, 0.5).loss;
  };
  FiniteDiffReport report = finite_diff_check(model, store, 1e-5);
  EXPECT_GE(report.min_kink_gap, 1e-4);
  EXPECT_LT(report.max_rel_error, 1e-4)
      << report.worst_param << " analytic " << report.worst_analytic << " numeric "
      << report.worst_numeric;
}

TEST(EncodeBehavior, FullGradientCheck) {
  ModelConfig cfg = small_model(4);
  cfg.metapaths_s = {"s", "s.s"};
  cfg.metapaths_c = {"c", "s.c"};
  EmbeddingProvider provider = random_provider(6, cfg.dim, 55);
  RelGraph g = build_graph(6, {{0, 1, Behavior::CoView},
                               {1, 2, Behavior::CoView},
                               {0, 3, Behavior::CoPurchase},
                               {4, 5, Behavior::CoView}});
  ParamStore store = init_params(cfg, 56);
  Rng wrng(57);
  Tensor w = random_tensor(wrng, {cfg.dim});
  auto model = [&](Tape& t, const ParamStore& s) {
    EmbedContext ctx(t, s, cfg, g, provider, 58);
    Var total;
    for (ItemId item : {0, 1, 4}) {
      for (RelationType task : kRelations) {
        Var term = dot(ctx.behavior_p(task, item), t.constant(w));
        total = total.defined() ? add(total, term) : term;
      }
    }
    return total;
  };
  FiniteDiffReport report = finite_diff_check(model, store, 1e-5);
  EXPECT_GE(report.min_kink_gap, 1e-4);
  EXPECT_LT(report.max_rel_error, 1e-4)
      << report.worst_param << " analytic " << report.worst_analytic << " numeric "
      << report.worst_numeric;
}
