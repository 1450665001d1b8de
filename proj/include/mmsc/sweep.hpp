#pragma once

#include <cstdint>
#include <functional>
#include <future>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mmsc/errors.hpp"
#include "mmsc/eval.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/judge.hpp"
#include "mmsc/model.hpp"
#include "mmsc/synth.hpp"
#include "mmsc/trainer.hpp"

namespace mmsc {

// Judge selection shared by CLI and sweeps.
struct JudgeSpec {
  std::string kind = "oracle";  // oracle | always_yes | always_no | external | none
  std::string command;          // for external

  void validate() const {
    if (kind != "oracle" && kind != "always_yes" && kind != "always_no" && kind != "external" &&
        kind != "none") {
      throw ConfigError("unknown judge '" + kind + "'");
    }
    if (kind == "external" && command.empty()) {
      throw ConfigError("external judge needs judge_cmd");
    }
  }
};

inline std::unique_ptr<Judge> make_judge(const JudgeSpec& spec, const GroundTruth* truth) {
  spec.validate();
  if (spec.kind == "oracle") {
    if (!truth) throw ConfigError("oracle judge needs a ground-truth file");
    return std::make_unique<OracleJudge>(*truth);
  }
  if (spec.kind == "always_yes" || spec.kind == "none") return std::make_unique<ConstJudge>(true);
  if (spec.kind == "always_no") return std::make_unique<ConstJudge>(false);
  return std::make_unique<ExternalJudge>(spec.command);
}

struct PipelineResult {
  TestSplit split;
  FitResult fit_result;
  EvalReport report;
  std::vector<TaskPair> embeddings;
};

// Full train-then-evaluate pass: judge-refined test split, fit on the
// remaining graph, forward-only embeddings, link-prediction report.
inline PipelineResult run_pipeline(const RelGraph& graph, const EmbeddingProvider& provider,
                                   const GroundTruth* truth, const ModelConfig& model,
                                   const TrainConfig& train, const JudgeSpec& judge_spec,
                                   std::ostream* progress = nullptr) {
  PipelineResult out;
  auto judge = make_judge(judge_spec, truth);
  MetadataCatalog catalog(graph.item_count(), truth);
  Rng split_rng = derive_rng(train.seed, hash_str("pipeline.test_split"));
  out.split = build_test_set(graph, *judge, catalog, split_rng, train.eval_negatives);
  Judge* train_judge = judge_spec.kind == "none" ? nullptr : judge.get();
  out.fit_result =
      fit(out.split.train_graph, provider, model, train, train_judge, truth, progress);
  out.embeddings = embed_all_items(model, out.fit_result.params, out.split.train_graph, provider,
                                   expansion_seed(train.seed));
  out.report = evaluate(out.embeddings, out.split.test);
  return out;
}

struct SweepRow {
  std::string axis;
  double value = 0.0;
  std::string variant;
  std::uint64_t seed = 0;
  double train_precision = 1.0;  // exact when ground truth labels the noise
  Metrics substitutable;
  Metrics complementary;
};

inline std::string sweep_csv_header() {
  return "axis,value,variant,seed,train_precision,h10_s,m10_s,n10_s,h10_c,m10_c,n10_c";
}

inline std::string sweep_csv_row(const SweepRow& r) {
  char buf[320];
  std::snprintf(buf, sizeof(buf), "%s,%.9g,%s,%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                r.axis.c_str(), r.value, r.variant.c_str(),
                static_cast<unsigned long long>(r.seed), r.train_precision, r.substitutable.h10,
                r.substitutable.mrr10, r.substitutable.ndcg10, r.complementary.h10,
                r.complementary.mrr10, r.complementary.ndcg10);
  return buf;
}

struct SweepVariant {
  std::string name = "full";
  AblationFlags ablation;
};

inline SweepVariant parse_variant(const std::string& name) {
  SweepVariant v;
  v.name = name;
  if (name != "full") v.ablation = AblationFlags::parse(name);
  return v;
}

namespace detail {

template <typename Fn>
std::vector<SweepRow> run_cells(const std::vector<Fn>& cells, std::size_t workers) {
  std::vector<SweepRow> rows(cells.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) rows[i] = cells[i]();
    return rows;
  }
  for (std::size_t start = 0; start < cells.size(); start += workers) {
    const std::size_t end = std::min(cells.size(), start + workers);
    std::vector<std::future<SweepRow>> futures;
    for (std::size_t i = start; i < end; ++i) {
      futures.push_back(std::async(std::launch::async, cells[i]));
    }
    for (std::size_t i = start; i < end; ++i) rows[i] = futures[i - start].get();
  }
  return rows;
}

}  // namespace detail

// Injected-noise robustness sweep: per (ratio, variant, seed) the base graph
// is perturbed with labeled noise, then trained and evaluated end to end.
inline std::vector<SweepRow> noise_sweep(const RelGraph& base_graph, const GroundTruth& truth,
                                         const EmbeddingProvider& provider,
                                         const std::vector<double>& ratios,
                                         const std::vector<SweepVariant>& variants,
                                         const std::vector<std::uint64_t>& seeds,
                                         const ModelConfig& model, const TrainConfig& train,
                                         const JudgeSpec& judge_spec, std::size_t workers = 1) {
  for (double r : ratios) {
    if (r < 0.0 || r > 1.0) throw ConfigError("noise ratios must lie in [0, 1]");
  }
  using Cell = std::function<SweepRow()>;
  std::vector<Cell> cells;
  for (double ratio : ratios) {
    for (const auto& variant : variants) {
      for (std::uint64_t seed : seeds) {
        cells.push_back([&, ratio, variant, seed]() {
          Rng noise_rng = derive_rng(seed, hash_str("sweep.noise"),
                                     static_cast<std::uint64_t>(ratio * 1e6));
          NoisyGraph noisy = inject_noise(base_graph, truth, ratio, noise_rng);
          ModelConfig m = model;
          m.ablation = variant.ablation;
          TrainConfig t = train;
          t.seed = seed;
          PipelineResult res = run_pipeline(noisy.graph, provider, &truth, m, t, judge_spec);
          SweepRow row;
          row.axis = "noise";
          row.value = ratio;
          row.variant = variant.name;
          row.seed = seed;
          row.train_precision = noisy.edge_precision();
          row.substitutable = res.report.metrics(RelationType::Substitutable);
          row.complementary = res.report.metrics(RelationType::Complementary);
          return row;
        });
      }
    }
  }
  return detail::run_cells(cells, workers);
}

// Hyperparameter sensitivity sweep along lambda or the judge budget.
inline std::vector<SweepRow> sensitivity_sweep(const RelGraph& base_graph, const GroundTruth* truth,
                                               const EmbeddingProvider& provider,
                                               const std::string& axis,
                                               const std::vector<double>& values,
                                               const std::vector<std::uint64_t>& seeds,
                                               const ModelConfig& model, const TrainConfig& train,
                                               const JudgeSpec& judge_spec,
                                               std::size_t workers = 1) {
  if (axis != "lambda" && axis != "judge_budget") {
    throw ConfigError("sensitivity axis must be lambda or judge_budget");
  }
  if (values.size() < 2) throw ConfigError("sensitivity sweep needs at least 2 values");
  using Cell = std::function<SweepRow()>;
  std::vector<Cell> cells;
  for (double value : values) {
    for (std::uint64_t seed : seeds) {
      cells.push_back([&, value, seed, axis]() {
        ModelConfig m = model;
        TrainConfig t = train;
        t.seed = seed;
        if (axis == "lambda") {
          t.lambda = value;
        } else {
          t.judge_budget = static_cast<std::size_t>(value);
          if (t.judge_budget == 0) m.ablation.no_judge = true;
        }
        PipelineResult res = run_pipeline(base_graph, provider, truth, m, t, judge_spec);
        SweepRow row;
        row.axis = axis;
        row.value = value;
        row.variant = m.ablation.str();
        row.seed = seed;
        row.substitutable = res.report.metrics(RelationType::Substitutable);
        row.complementary = res.report.metrics(RelationType::Complementary);
        return row;
      });
    }
  }
  return detail::run_cells(cells, workers);
}

}  // namespace mmsc
