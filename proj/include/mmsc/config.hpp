#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mmsc/errors.hpp"
#include "mmsc/model.hpp"
#include "mmsc/sweep.hpp"
#include "mmsc/trainer.hpp"

namespace mmsc {

// Resolved run configuration: data paths, model dims, training
// hyperparameters, judge selection. Parsed from a plain `key = value` file
// with '#' comments; unknown keys are rejected so typos fail fast.
struct RunConfig {
  std::string edges_path;
  std::string embeddings_path;
  std::string ground_truth_path;
  std::string out_dir = ".";

  ModelConfig model;
  TrainConfig train;
  JudgeSpec judge;

  std::size_t workers = 1;
  std::size_t coldstart_k = 5;
  double coldstart_holdout = 0.1;
  std::size_t degree_groups_n = 10;

  void apply(const std::string& key, const std::string& value);
  void validate() const {
    model.validate();
    train.validate();
    judge.validate();
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (coldstart_k < 1) throw ConfigError("coldstart_k must be >= 1");
    if (coldstart_holdout <= 0.0 || coldstart_holdout >= 1.0) {
      throw ConfigError("coldstart_holdout must be in (0, 1)");
    }
    if (degree_groups_n < 1) throw ConfigError("degree_groups must be >= 1");
  }

  // Key=value lines embedded as provenance comments in every text output.
  std::vector<std::string> provenance() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& tok : split_list(v)) out.push_back(parse_double(key, tok));
  return out;
}

inline std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const auto& tok : split_list(v)) out.push_back(parse_u64(key, tok));
  return out;
}

}  // namespace detail

inline void RunConfig::apply(const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "edges") {
    edges_path = value;
  } else if (key == "embeddings") {
    embeddings_path = value;
  } else if (key == "ground_truth") {
    ground_truth_path = value;
  } else if (key == "out_dir") {
    out_dir = value;
  } else if (key == "dim") {
    model.dim = parse_u64(key, value);
  } else if (key == "content_heads") {
    model.content_heads = parse_u64(key, value);
  } else if (key == "node_heads") {
    model.node_heads = parse_u64(key, value);
  } else if (key == "seq_len") {
    model.seq_len = parse_u64(key, value);
  } else if (key == "metapaths_s") {
    model.metapaths_s = split_list(value);
  } else if (key == "metapaths_c") {
    model.metapaths_c = split_list(value);
  } else if (key == "fanout_cap") {
    model.fanout_cap = parse_u64(key, value);
  } else if (key == "strict_infonce") {
    model.strict_infonce = parse_bool(key, value);
  } else if (key == "ablate") {
    model.ablation = AblationFlags::parse(value);
  } else if (key == "learning_rate") {
    train.learning_rate = parse_double(key, value);
  } else if (key == "dropout") {
    train.dropout = parse_double(key, value);
  } else if (key == "negatives_per_positive") {
    train.negatives_per_positive = parse_u64(key, value);
  } else if (key == "margin") {
    train.margin = parse_double(key, value);
  } else if (key == "tau") {
    train.tau = parse_double(key, value);
  } else if (key == "lambda") {
    train.lambda = parse_double(key, value);
  } else if (key == "batch_size") {
    train.batch_size = parse_u64(key, value);
  } else if (key == "max_epochs") {
    train.max_epochs = parse_u64(key, value);
  } else if (key == "patience") {
    train.patience = parse_u64(key, value);
  } else if (key == "seed") {
    train.seed = parse_u64(key, value);
  } else if (key == "judge_budget") {
    train.judge_budget = parse_u64(key, value);
  } else if (key == "val_fraction") {
    train.val_fraction = parse_double(key, value);
  } else if (key == "eval_negatives") {
    train.eval_negatives = parse_u64(key, value);
  } else if (key == "judge") {
    judge.kind = value;
  } else if (key == "judge_cmd") {
    judge.command = value;
  } else if (key == "workers") {
    workers = parse_u64(key, value);
  } else if (key == "coldstart_k") {
    coldstart_k = parse_u64(key, value);
  } else if (key == "coldstart_holdout") {
    coldstart_holdout = parse_double(key, value);
  } else if (key == "degree_groups") {
    degree_groups_n = parse_u64(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    cfg.apply(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return cfg;
}

inline std::vector<std::string> RunConfig::provenance() const {
  std::vector<std::string> out;
  auto kv = [&](const std::string& k, const std::string& v) { out.push_back(k + " = " + v); };
  auto num = [](double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return std::string(buf);
  };
  kv("edges", edges_path);
  kv("embeddings", embeddings_path);
  kv("ground_truth", ground_truth_path);
  kv("dim", std::to_string(model.dim));
  kv("content_heads", std::to_string(model.content_heads));
  kv("node_heads", std::to_string(model.node_heads));
  kv("seq_len", std::to_string(model.seq_len));
  {
    std::string s;
    for (const auto& p : model.metapaths_s) s += (s.empty() ? "" : ",") + p;
    kv("metapaths_s", s);
    std::string c;
    for (const auto& p : model.metapaths_c) c += (c.empty() ? "" : ",") + p;
    kv("metapaths_c", c);
  }
  kv("fanout_cap", std::to_string(model.fanout_cap));
  kv("strict_infonce", model.strict_infonce ? "true" : "false");
  kv("ablate", model.ablation.str());
  kv("learning_rate", num(train.learning_rate));
  kv("dropout", num(train.dropout));
  kv("negatives_per_positive", std::to_string(train.negatives_per_positive));
  kv("margin", num(train.margin));
  kv("tau", num(train.tau));
  kv("lambda", num(train.lambda));
  kv("batch_size", std::to_string(train.batch_size));
  kv("max_epochs", std::to_string(train.max_epochs));
  kv("patience", std::to_string(train.patience));
  kv("seed", std::to_string(train.seed));
  kv("judge", judge.kind);
  kv("judge_budget", std::to_string(train.judge_budget));
  kv("val_fraction", num(train.val_fraction));
  kv("eval_negatives", std::to_string(train.eval_negatives));
  return out;
}

}  // namespace mmsc
