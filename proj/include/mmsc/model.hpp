#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mmsc/content.hpp"
#include "mmsc/errors.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/optim.hpp"
#include "mmsc/rng.hpp"

namespace mmsc {

// Which pieces of the full model a run exercises. Defaults are the complete
// model; each switch maps to one CLI ablation flag.
struct AblationFlags {
  bool no_ssl = false;
  bool no_task_gate = false;
  bool no_content = false;
  bool no_behavior = false;
  bool no_judge = false;
  bool max_hop_2 = false;

  static AblationFlags parse(const std::string& name) {
    AblationFlags f;
    if (name.empty() || name == "none") return f;
    if (name == "no-ssl") {
      f.no_ssl = true;
    } else if (name == "no-task-gate") {
      f.no_task_gate = true;
    } else if (name == "no-content") {
      f.no_content = true;
    } else if (name == "no-behavior") {
      f.no_behavior = true;
    } else if (name == "no-judge") {
      f.no_judge = true;
    } else if (name == "max-hop-2") {
      f.max_hop_2 = true;
    } else {
      throw ConfigError("unknown ablation '" + name + "'");
    }
    return f;
  }

  std::string str() const {
    std::string out;
    auto append = [&](bool on, const char* name) {
      if (!on) return;
      if (!out.empty()) out += '+';
      out += name;
    };
    append(no_ssl, "no-ssl");
    append(no_task_gate, "no-task-gate");
    append(no_content, "no-content");
    append(no_behavior, "no-behavior");
    append(no_judge, "no-judge");
    append(max_hop_2, "max-hop-2");
    return out.empty() ? "none" : out;
  }
};

struct ModelConfig {
  std::size_t dim = 16;           // d
  std::size_t content_heads = 2;  // L
  std::size_t node_heads = 2;     // T
  std::size_t seq_len = 4;        // S, validated against the embedding file
  std::vector<std::string> metapaths_s = {"s", "s.s", "s.s.s"};
  std::vector<std::string> metapaths_c = {"c", "c.s", "s.c", "s.s.c", "s.c.s", "c.s.s"};
  std::size_t fanout_cap = 10;
  bool strict_infonce = false;  // printed-form denominator without the positive
  AblationFlags ablation;

  void validate() const {
    if (dim < 2) throw ConfigError("dim must be >= 2");
    if (content_heads < 1 || dim % content_heads != 0) {
      throw ConfigError("dim " + std::to_string(dim) + " must be divisible by content_heads " +
                        std::to_string(content_heads));
    }
    if (node_heads < 1) throw ConfigError("node_heads must be >= 1");
    if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
    if (fanout_cap < 1) throw ConfigError("fanout_cap must be >= 1");
    if (metapaths_s.empty() || metapaths_c.empty()) {
      throw ConfigError("meta-path sets must be nonempty");
    }
    if (paths(RelationType::Substitutable).empty() || paths(RelationType::Complementary).empty()) {
      throw ConfigError("meta-path sets empty after hop limit");
    }
  }

  std::size_t max_hops() const { return ablation.max_hop_2 ? 2 : 3; }

  std::vector<MetaPath> paths(RelationType task) const {
    const auto& raw = task == RelationType::Substitutable ? metapaths_s : metapaths_c;
    std::vector<MetaPath> out;
    for (const auto& text : raw) {
      MetaPath p = MetaPath::parse(text);
      if (p.length() <= max_hops()) out.push_back(std::move(p));
    }
    return out;
  }

  // Canonical serialization of the shape-defining fields; hashed into
  // checkpoints so evaluation refuses mismatched configurations.
  std::string canonical() const {
    std::ostringstream os;
    os << "dim=" << dim << ";L=" << content_heads << ";T=" << node_heads << ";S=" << seq_len
       << ";phi_s=";
    for (const auto& p : metapaths_s) os << p << ",";
    os << ";phi_c=";
    for (const auto& p : metapaths_c) os << p << ",";
    os << ";fanout=" << fanout_cap << ";strict_infonce=" << (strict_infonce ? 1 : 0)
       << ";ablate=" << ablation.str();
    return os.str();
  }

  std::uint64_t config_hash() const { return hash_str(canonical()); }
};

// ---- parameter naming ------------------------------------------------------

namespace names {

inline std::string task_tag(RelationType r) { return std::string(1, relation_letter(r)); }

inline std::string node_attn(RelationType t, std::size_t path, std::size_t head) {
  return "node." + task_tag(t) + ".p" + std::to_string(path) + ".h" + std::to_string(head) + ".attn";
}
inline std::string node_proj(RelationType t, std::size_t head) {
  return "node." + task_tag(t) + ".h" + std::to_string(head) + ".proj";
}
inline std::string node_mix(RelationType t) { return "node." + task_tag(t) + ".mix"; }
inline std::string path_wb(RelationType t) { return "path." + task_tag(t) + ".wb"; }
inline std::string path_bias(RelationType t) { return "path." + task_tag(t) + ".bias"; }
inline std::string path_score(RelationType t) { return "path." + task_tag(t) + ".score"; }
inline std::string fallback_w(RelationType t) { return "fallback." + task_tag(t) + ".w"; }

inline std::string gate_w1(const std::string& level, RelationType t) {
  return "gate." + level + "." + task_tag(t) + ".w1";
}
inline std::string gate_w2(const std::string& level, RelationType t) {
  return "gate." + level + "." + task_tag(t) + ".w2";
}
inline std::string gate_b(const std::string& level, RelationType t) {
  return "gate." + level + "." + task_tag(t) + ".b";
}

}  // namespace names

namespace detail {

inline Tensor glorot(Rng& rng, const Shape& shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> data(n);
  for (auto& v : data) v = (2.0 * rng.uniform_real() - 1.0) * limit;
  return Tensor(shape, std::move(data));
}

}  // namespace detail

// Fresh parameters for every module; each tensor gets its own substream so
// the draw depends only on (seed, name).
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore store;
  const std::size_t d = cfg.dim;
  const std::size_t dh = d / cfg.content_heads;

  auto put = [&](const std::string& name, const Shape& shape, std::size_t fan_in,
                 std::size_t fan_out, double fill = 0.0, bool constant = false) {
    if (constant) {
      store.add(name, Tensor::full(shape, fill));
      return;
    }
    Rng rng = derive_rng(seed, hash_str("init"), hash_str(name));
    store.add(name, detail::glorot(rng, shape, fan_in, fan_out));
  };

  for (RelationType task : kRelations) {
    const RelFTNames content = relft_names(task);
    for (std::size_t l = 0; l < cfg.content_heads; ++l) {
      put(content.wq(l), {d, dh}, d, dh);
      put(content.wk(l), {d, dh}, d, dh);
      put(content.wv(l), {d, dh}, d, dh);
    }
    put(content.wo(), {d, d}, d, d);

    const auto paths = cfg.paths(task);
    for (std::size_t k = 0; k < paths.size(); ++k) {
      for (std::size_t u = 0; u < cfg.node_heads; ++u) {
        put(names::node_attn(task, k, u), {2 * d}, 2 * d, 1);
      }
    }
    for (std::size_t u = 0; u < cfg.node_heads; ++u) put(names::node_proj(task, u), {d, d}, d, d);
    put(names::node_mix(task), {cfg.node_heads * d, d}, cfg.node_heads * d, d);
    put(names::path_wb(task), {d}, d, d);
    put(names::path_bias(task), {d}, d, d, 0.0, /*constant=*/true);
    put(names::path_score(task), {d}, d, 1);
    put(names::fallback_w(task), {d, d}, d, d);

    // Semantic gates start balanced; task gates start primary-dominant
    // (sigmoid(2) ~ 0.88) so early training is not contaminated by the
    // sibling task's geometry. Both remain fully learnable.
    for (const char* level : {"sem", "task"}) {
      put(names::gate_w1(level, task), {d, d}, d, d);
      put(names::gate_w2(level, task), {d, d}, d, d);
      const double bias = std::string(level) == "task" ? 2.0 : 0.0;
      put(names::gate_b(level, task), {d}, d, d, bias, /*constant=*/true);
    }
  }
  return store;
}

// A value pair playing the role of q, p, a, or e at successive stages.
struct TaskPair {
  Tensor s_vec;
  Tensor c_vec;

  const Tensor& of(RelationType r) const {
    return r == RelationType::Substitutable ? s_vec : c_vec;
  }
};

struct TaskVarPair {
  Var s_vec;
  Var c_vec;

  const Var& of(RelationType r) const { return r == RelationType::Substitutable ? s_vec : c_vec; }

  TaskPair values() const { return TaskPair{s_vec.value(), c_vec.value()}; }
};

}  // namespace mmsc
