// Command-line front door: synth, train, eval, coldstart, sweep.
//
// Exit codes: 0 success, 2 config/validation error, 3 data-format error,
// 4 numerical abort.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmsc/mmsc.hpp"

namespace fs = std::filesystem;
using namespace mmsc;

namespace {

std::string num_str(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

std::string metrics_summary(const EvalReport& report) {
  const Metrics& s = report.metrics(RelationType::Substitutable);
  const Metrics& c = report.metrics(RelationType::Complementary);
  std::string out;
  out += "h10_s=" + num_str(s.h10) + " m10_s=" + num_str(s.mrr10) + " n10_s=" + num_str(s.ndcg10);
  out += " h10_c=" + num_str(c.h10) + " m10_c=" + num_str(c.mrr10) + " n10_c=" + num_str(c.ndcg10);
  out += " queries_s=" + std::to_string(s.queries) + " queries_c=" + std::to_string(c.queries);
  return out;
}

void write_lines(const std::string& path, const std::vector<std::string>& comments,
                 const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path);
  for (const auto& c : comments) out << "# " << c << "\n";
  for (const auto& l : lines) out << l << "\n";
  if (!out) throw FormatError("write failed: " + path);
}

struct LoadedData {
  RelGraph graph;
  EmbeddingProvider provider;
  std::optional<GroundTruth> truth;
};

LoadedData load_data(const RunConfig& cfg) {
  if (cfg.edges_path.empty()) throw ConfigError("config needs 'edges'");
  if (cfg.embeddings_path.empty()) throw ConfigError("config needs 'embeddings'");
  EmbeddingProvider provider = load_embeddings(cfg.embeddings_path);
  if (provider.dim() != cfg.model.dim) {
    throw ConfigError("embedding dim " + std::to_string(provider.dim()) +
                      " does not match model dim " + std::to_string(cfg.model.dim));
  }
  if (provider.seq_len() != cfg.model.seq_len) {
    throw ConfigError("embedding seq_len " + std::to_string(provider.seq_len()) +
                      " does not match model seq_len " + std::to_string(cfg.model.seq_len));
  }
  std::size_t max_id = 0;
  auto edges = read_edge_file(cfg.edges_path, &max_id);
  if (!edges.empty() && max_id >= provider.item_count()) {
    throw ConfigError("edge file references item " + std::to_string(max_id) +
                      " outside the embedding file's " + std::to_string(provider.item_count()) +
                      " items");
  }
  LoadedData data{build_graph(provider.item_count(), edges), std::move(provider), std::nullopt};
  if (!cfg.ground_truth_path.empty()) data.truth = read_ground_truth(cfg.ground_truth_path);
  return data;
}

const GroundTruth* truth_ptr(const LoadedData& data) {
  return data.truth ? &*data.truth : nullptr;
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  std::string out_dir;
};

int run_synth(const SynthArgs& args) {
  fs::create_directories(args.out_dir);
  auto [graph, truth] = generate_planted_graph(args.cfg);
  RelGraph final_graph = std::move(graph);
  std::vector<EdgeKey> noise_edges;
  if (args.cfg.noise_ratio > 0.0) {
    Rng noise_rng = derive_rng(args.cfg.seed, hash_str("synth.noise"));
    NoisyGraph noisy = inject_noise(final_graph, truth, args.cfg.noise_ratio, noise_rng);
    noise_edges = noisy.noise_edges;
    final_graph = std::move(noisy.graph);
  }
  Rng embed_rng = derive_rng(args.cfg.seed, hash_str("synth.embeddings"));
  auto sequences = generate_embeddings(truth, args.cfg, embed_rng);

  std::vector<std::string> comments{
      "mmsc synth",
      "clusters = " + std::to_string(args.cfg.n_clusters),
      "items_per_cluster = " + std::to_string(args.cfg.items_per_cluster),
      "intra_sub_prob = " + num_str(args.cfg.intra_sub_prob),
      "cluster_pairing_degree = " + std::to_string(args.cfg.cluster_pairing_degree),
      "complementary_block_size = " + std::to_string(args.cfg.complementary_block_size),
      "noise_ratio = " + num_str(args.cfg.noise_ratio),
      "embed_dim = " + std::to_string(args.cfg.embed_dim),
      "embed_noise_std = " + num_str(args.cfg.embed_noise_std),
      "zipf_exponent = " + num_str(args.cfg.zipf_exponent),
      "seed = " + std::to_string(args.cfg.seed)};

  std::vector<EdgeRecord> records;
  for (const auto& e : final_graph.all_edges()) {
    EdgeRecord rec;
    rec.src = e.u;
    rec.dst = e.v;
    if (e.relation == RelationType::Complementary) {
      rec.behavior = Behavior::CoPurchase;
    } else {
      rec.behavior = (e.u + e.v) % 2 == 0 ? Behavior::CoView : Behavior::BuyAfterView;
    }
    records.push_back(rec);
  }
  write_edge_file(args.out_dir + "/edges.tsv", records, comments);
  write_embeddings(args.out_dir + "/embeddings.mmeb", sequences);
  write_ground_truth(args.out_dir + "/truth.tsv", truth, comments);
  std::cerr << "synth: " << final_graph.item_count() << " items, "
            << final_graph.edge_count(RelationType::Substitutable) << " substitutable edges, "
            << final_graph.edge_count(RelationType::Complementary) << " complementary edges, "
            << noise_edges.size() << " injected noise edges\n";
  std::cout << "items=" << final_graph.item_count() << " edges=" << final_graph.edge_count()
            << " noise_edges=" << noise_edges.size() << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

int run_train(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  LoadedData data = load_data(cfg);

  auto judge = make_judge(cfg.judge, truth_ptr(data));
  MetadataCatalog catalog(data.graph.item_count(), truth_ptr(data));
  Rng split_rng = derive_rng(cfg.train.seed, hash_str("pipeline.test_split"));
  TestSplit split = build_test_set(data.graph, *judge, catalog, split_rng, cfg.train.eval_negatives);

  const auto comments = cfg.provenance();
  write_test_set(cfg.out_dir + "/test_set.tsv", split.test, comments);

  Judge* train_judge = cfg.judge.kind == "none" ? nullptr : judge.get();
  FitResult result = fit(split.train_graph, data.provider, cfg.model, cfg.train, train_judge,
                         truth_ptr(data), &std::cerr);

  save_checkpoint(result.params, cfg.out_dir + "/checkpoint.ckpt", cfg.model.config_hash());
  std::vector<std::string> log_lines{training_log_header()};
  for (const auto& row : result.log) log_lines.push_back(format_log_row(row));
  write_lines(cfg.out_dir + "/training_log.csv", comments, log_lines);

  std::cerr << "train: " << result.epochs_run << " epochs, best epoch " << result.best_epoch
            << ", judge accepted " << result.augmented.accepted_count() << "/"
            << result.augmented.submitted_count() << " pairs"
            << (result.used_raw_edges ? " (training on raw edges)" : "") << "\n";
  std::cout << "epochs=" << result.epochs_run << " best_epoch=" << result.best_epoch
            << " val_h10_s=" << num_str(result.final_val[0].h10)
            << " val_m10_s=" << num_str(result.final_val[0].mrr10)
            << " val_h10_c=" << num_str(result.final_val[1].h10)
            << " val_m10_c=" << num_str(result.final_val[1].mrr10) << "\n";
  return 0;
}

// ---- eval -------------------------------------------------------------------

int run_eval(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& test_path) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  LoadedData data = load_data(cfg);
  ParamStore params = load_checkpoint_checked(checkpoint_path, cfg.model.config_hash());
  TestSet test = read_test_set(test_path);

  // The evaluation graph is the loaded graph minus the held-out positives.
  std::vector<EdgeKey> kept;
  std::set<EdgeKey> held;
  for (RelationType r : kRelations) {
    for (const auto& pair : test.pairs(r)) held.insert(make_edge_key(r, pair.query, pair.positive));
  }
  for (const auto& e : data.graph.all_edges()) {
    if (!held.count(e)) kept.push_back(e);
  }
  RelGraph eval_graph = build_graph_from_keys(data.graph.item_count(), kept);

  const auto embeddings = embed_all_items(cfg.model, params, eval_graph, data.provider,
                                          expansion_seed(cfg.train.seed));
  EvalReport report = evaluate(embeddings, test);

  const auto comments = cfg.provenance();
  std::vector<std::string> lines{"relation,h10,mrr10,ndcg10,queries"};
  for (RelationType r : kRelations) {
    const Metrics& m = report.metrics(r);
    lines.push_back(std::string(relation_name(r)) + "," + num_str(m.h10) + "," + num_str(m.mrr10) +
                    "," + num_str(m.ndcg10) + "," + std::to_string(m.queries));
  }
  write_lines(cfg.out_dir + "/report.csv", comments, lines);

  DegreeGroupReport groups = degree_group_report(eval_graph, embeddings, test, cfg.degree_groups_n);
  std::vector<std::string> group_lines{"relation,group,queries,h10,mrr10,ndcg10"};
  for (RelationType r : kRelations) {
    for (const auto& gm : groups.by_relation[static_cast<int>(r)]) {
      group_lines.push_back(std::string(relation_name(r)) + "," + std::to_string(gm.group) + "," +
                            std::to_string(gm.metrics.queries) + "," + num_str(gm.metrics.h10) +
                            "," + num_str(gm.metrics.mrr10) + "," + num_str(gm.metrics.ndcg10));
    }
  }
  write_lines(cfg.out_dir + "/degree_groups.csv", comments, group_lines);

  std::cout << metrics_summary(report) << "\n";
  return 0;
}

// ---- coldstart ---------------------------------------------------------------

int run_coldstart(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  LoadedData data = load_data(cfg);
  if (!data.truth) throw ConfigError("coldstart needs a ground_truth file for test pairs");

  ParamStore trained;
  auto fit_warm = [&](const RelGraph& warm_graph, const EmbeddingProvider& warm_provider,
                      const GroundTruth& warm_truth, std::vector<TaskPair>* finals) {
    auto judge = make_judge(cfg.judge, &warm_truth);
    Judge* train_judge = cfg.judge.kind == "none" ? nullptr : judge.get();
    FitResult result = fit(warm_graph, warm_provider, cfg.model, cfg.train, train_judge,
                           &warm_truth, &std::cerr);
    *finals = embed_all_items(cfg.model, result.params, result.train_graph, warm_provider,
                              expansion_seed(cfg.train.seed));
    return result.params;
  };
  ColdStartRun run = coldstart_pipeline(data.graph, data.provider, *data.truth,
                                        cfg.coldstart_holdout, cfg.coldstart_k,
                                        cfg.train.eval_negatives, cfg.train.seed, fit_warm);
  trained = run.params;
  const ColdStartReport& report = run.report;

  const std::string ckpt_path = cfg.out_dir + "/checkpoint.ckpt";
  save_checkpoint(trained, ckpt_path, cfg.model.config_hash());
  // Inference must leave the trained parameters untouched.
  const std::string verify_path = cfg.out_dir + "/checkpoint.verify.ckpt";
  save_checkpoint(run.params, verify_path, cfg.model.config_hash());
  std::ifstream f1(ckpt_path, std::ios::binary), f2(verify_path, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  const bool unchanged = b1 == b2;
  fs::remove(verify_path);

  auto comments = cfg.provenance();
  comments.push_back("coldstart_k = " + std::to_string(cfg.coldstart_k));
  comments.push_back("coldstart_holdout = " + num_str(cfg.coldstart_holdout));
  std::vector<std::string> lines{"relation,h10,mrr10,ndcg10,queries,k,null_h10"};
  for (RelationType r : kRelations) {
    const Metrics& m = report.eval.metrics(r);
    lines.push_back(std::string(relation_name(r)) + "," + num_str(m.h10) + "," + num_str(m.mrr10) +
                    "," + num_str(m.ndcg10) + "," + std::to_string(m.queries) + "," +
                    std::to_string(report.k) + "," + num_str(report.null_h10));
  }
  write_lines(cfg.out_dir + "/coldstart.csv", comments, lines);

  std::cout << "cold_items=" << run.cold_items.size()
            << " h10_s=" << num_str(report.eval.metrics(RelationType::Substitutable).h10)
            << " m10_s=" << num_str(report.eval.metrics(RelationType::Substitutable).mrr10)
            << " h10_c=" << num_str(report.eval.metrics(RelationType::Complementary).h10)
            << " m10_c=" << num_str(report.eval.metrics(RelationType::Complementary).mrr10)
            << " null_h10=" << num_str(report.null_h10)
            << " params_unchanged=" << (unchanged ? 1 : 0) << "\n";
  return 0;
}

// ---- sweep -------------------------------------------------------------------

struct SweepArgs {
  std::string axis = "noise";
  std::vector<double> values;
  std::vector<std::string> variants{"full"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

int run_sweep(const RunConfig& cfg, const SweepArgs& args) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  LoadedData data = load_data(cfg);
  if (args.values.empty()) throw ConfigError("sweep needs --values");

  std::vector<SweepRow> rows;
  if (args.axis == "noise") {
    if (!data.truth) throw ConfigError("noise sweep needs a ground_truth file");
    std::vector<SweepVariant> variants;
    for (const auto& name : args.variants) variants.push_back(parse_variant(name));
    rows = noise_sweep(data.graph, *data.truth, data.provider, args.values, variants, args.seeds,
                       cfg.model, cfg.train, cfg.judge, cfg.workers);
  } else {
    rows = sensitivity_sweep(data.graph, truth_ptr(data), data.provider, args.axis, args.values,
                             args.seeds, cfg.model, cfg.train, cfg.judge, cfg.workers);
  }

  auto comments = cfg.provenance();
  comments.push_back("sweep_axis = " + args.axis);
  std::vector<std::string> lines{sweep_csv_header()};
  for (const auto& row : rows) lines.push_back(sweep_csv_row(row));
  write_lines(cfg.out_dir + "/sweep.csv", comments, lines);
  std::cout << "rows=" << rows.size() << " out=" << cfg.out_dir + "/sweep.csv" << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal substitutable/complementary item representation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a planted benchmark dataset");
  synth->add_option("--out", synth_args.out_dir, "output directory")->required();
  synth->add_option("--clusters", synth_args.cfg.n_clusters, "number of clusters");
  synth->add_option("--items", synth_args.cfg.items_per_cluster, "items per cluster");
  synth->add_option("--intra-prob", synth_args.cfg.intra_sub_prob, "base pair probability");
  synth->add_option("--pairing", synth_args.cfg.cluster_pairing_degree,
                    "complementary cluster pairings");
  synth->add_option("--comp-block", synth_args.cfg.complementary_block_size,
                    "co-complementary block size (0 = whole cluster)");
  synth->add_option("--noise", synth_args.cfg.noise_ratio, "injected noise ratio");
  synth->add_option("--embed-dim", synth_args.cfg.embed_dim, "content embedding dimension");
  synth->add_option("--embed-noise-std", synth_args.cfg.embed_noise_std,
                    "content noise standard deviation");
  synth->add_option("--zipf", synth_args.cfg.zipf_exponent, "activity Zipf exponent");
  synth->add_option("--seed", synth_args.cfg.seed, "random seed");

  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint_path, test_path;
  SweepArgs sweep_args;
  double opt_lambda = std::numeric_limits<double>::quiet_NaN();
  double opt_holdout = std::numeric_limits<double>::quiet_NaN();
  std::int64_t opt_seed = -1, opt_k = -1;
  std::string opt_ablate, opt_out;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file")->required();
    cmd->add_option("--set", overrides, "override 'key=value' (repeatable)");
    cmd->add_option("--seed", opt_seed, "override seed");
    cmd->add_option("--lambda", opt_lambda, "override lambda");
    cmd->add_option("--ablate", opt_ablate, "ablation switch");
    cmd->add_option("--out", opt_out, "override output directory");
  };

  CLI::App* train = app.add_subcommand("train", "split a test set, fit, checkpoint");
  add_common(train);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a test set");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--test", test_path, "test-set file")->required();
  CLI::App* coldstart = app.add_subcommand("coldstart", "train on warm items, infer cold ones");
  add_common(coldstart);
  coldstart->add_option("--holdout", opt_holdout, "cold item fraction");
  coldstart->add_option("--k", opt_k, "retrieval depth");
  CLI::App* sweep = app.add_subcommand("sweep", "noise / sensitivity sweeps");
  add_common(sweep);
  sweep->add_option("--axis", sweep_args.axis, "noise | lambda | judge_budget");
  sweep->add_option("--values,--ratios", sweep_args.values, "axis values")->delimiter(',');
  sweep->add_option("--variants", sweep_args.variants, "model variants")->delimiter(',');
  sweep->add_option("--seeds", sweep_args.seeds, "seeds")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return run_synth(synth_args);

    RunConfig cfg = load_run_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (opt_seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(opt_seed);
    if (!std::isnan(opt_lambda)) cfg.train.lambda = opt_lambda;
    if (!opt_ablate.empty()) cfg.model.ablation = AblationFlags::parse(opt_ablate);
    if (!opt_out.empty()) cfg.out_dir = opt_out;
    if (!std::isnan(opt_holdout)) cfg.coldstart_holdout = opt_holdout;
    if (opt_k > 0) cfg.coldstart_k = static_cast<std::size_t>(opt_k);

    if (train->parsed()) return run_train(cfg);
    if (eval_cmd->parsed()) return run_eval(cfg, checkpoint_path, test_path);
    if (coldstart->parsed()) return run_coldstart(cfg);
    if (sweep->parsed()) return run_sweep(cfg, sweep_args);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const IndexError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
