#include <gtest/gtest.h>

#include <fstream>
#include <string>

#include "mmsc/judge.hpp"
#include "mmsc/synth.hpp"

using namespace mmsc;

namespace {

std::pair<RelGraph, GroundTruth> planted() {
  SynthConfig cfg;
  cfg.n_clusters = 4;
  cfg.items_per_cluster = 4;
  cfg.intra_sub_prob = 0.8;
  cfg.cluster_pairing_degree = 1;
  cfg.seed = 5;
  return generate_planted_graph(cfg);
}

}  // namespace

TEST(MetadataCatalogTest, TextsCarryIdsAndClusters) {
  auto [g, truth] = planted();
  MetadataCatalog catalog(g.item_count(), &truth);
  EXPECT_NE(catalog.meta(3).text.find("item 3"), std::string::npos);
  EXPECT_NE(catalog.meta(3).text.find("cluster 0"), std::string::npos);
  EXPECT_THROW(catalog.meta(999), UsageError);

  MetadataCatalog bare(4);
  EXPECT_EQ(bare.meta(2).text, "item 2");
}

TEST(ConstJudgeTest, FixedVerdicts) {
  ConstJudge yes(true), no(false);
  ItemMeta a{0, "a"}, b{1, "b"};
  EXPECT_TRUE(yes.is_related(a, b, RelationType::Substitutable));
  EXPECT_FALSE(no.is_related(a, b, RelationType::Complementary));
}

TEST(OracleJudgeTest, AnswersFromGroundTruth) {
  auto [g, truth] = planted();
  OracleJudge judge(truth);
  MetadataCatalog catalog(g.item_count(), &truth);
  // Items 0 and 1 share cluster 0; items 0 and n-1 are in different,
  // unpaired-or-paired clusters depending on layout, so check via truth.
  for (RelationType r : kRelations) {
    for (const auto& e : g.edges(r)) {
      EXPECT_EQ(judge.is_related(catalog.meta(e.u), catalog.meta(e.v), r),
                truth.is_true_pair(r, e.u, e.v));
    }
  }
  EXPECT_TRUE(judge.is_related(catalog.meta(0), catalog.meta(1), RelationType::Substitutable));
  EXPECT_FALSE(judge.is_related(catalog.meta(0), catalog.meta(1), RelationType::Complementary));
}

TEST(ExternalJudgeTest, RoundTripsOverPipes) {
  // Child replies yes exactly when both texts name the same cluster and the
  // relation is substitutable.
  const std::string script = ::testing::TempDir() + "judge_script.py";
  std::ofstream(script) << R"PY(import json, re, sys
for line in sys.stdin:
    req = json.loads(line)
    ca = re.search(r"cluster (\d+)", req["text_a"])
    cb = re.search(r"cluster (\d+)", req["text_b"])
    same = ca and cb and ca.group(1) == cb.group(1)
    verdict = "yes" if (same and req["relation"] == "substitutable") else "no"
    print(json.dumps({"id": req["id"], "verdict": verdict}), flush=True)
)PY";
  auto [g, truth] = planted();
  MetadataCatalog catalog(g.item_count(), &truth);
  ExternalJudge judge("python3 -u " + script);
  EXPECT_TRUE(judge.is_related(catalog.meta(0), catalog.meta(1), RelationType::Substitutable));
  EXPECT_FALSE(judge.is_related(catalog.meta(0), catalog.meta(1), RelationType::Complementary));
  // Different clusters.
  EXPECT_FALSE(judge.is_related(catalog.meta(0), catalog.meta(15), RelationType::Substitutable));
}

TEST(ExternalJudgeTest, MalformedResponseIsJudgeError) {
  const std::string script = ::testing::TempDir() + "judge_garbage.py";
  std::ofstream(script) << R"PY(import sys
for line in sys.stdin:
    print("not json at all", flush=True)
)PY";
  ExternalJudge judge("python3 -u " + script);
  ItemMeta a{0, "a"}, b{1, "b"};
  EXPECT_THROW(judge.is_related(a, b, RelationType::Substitutable), JudgeError);
}

TEST(ExternalJudgeTest, DeadProcessIsJudgeError) {
  ExternalJudge judge("exit 0");
  ItemMeta a{0, "a"}, b{1, "b"};
  EXPECT_THROW(judge.is_related(a, b, RelationType::Substitutable), JudgeError);
}
