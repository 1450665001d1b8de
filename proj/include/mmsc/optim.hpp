#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mmsc/autograd.hpp"
#include "mmsc/errors.hpp"
#include "mmsc/tensor.hpp"

namespace mmsc {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

// Named trainable parameters with per-parameter adaptive-moment state.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value) {
    if (entries_.count(name)) throw UsageError("parameter already exists: " + name);
    Entry e;
    e.value = std::move(value);
    entries_.emplace(name, std::move(e));
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& value_mut(const std::string& name) { return entry_mut(name).value; }
  std::int64_t step_count(const std::string& name) const { return entry(name).step; }

  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  std::size_t coordinate_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : entries_) n += v.value.size();
    return n;
  }

  friend void adam_step(ParamStore& params, const GradMap& grads, double lr);
  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (const auto& [k, e] : a.entries_) {
      auto it = b.entries_.find(k);
      if (it == b.entries_.end()) return false;
      if (e.value.shape() != it->second.value.shape()) return false;
      if (e.value.data() != it->second.value.data()) return false;
    }
    return true;
  }

 private:
  struct Entry {
    Tensor value;
    Tensor m;  // first moment, allocated on first update
    Tensor v;  // second moment
    std::int64_t step = 0;
  };

  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  Entry& entry_mut(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

// Leaf lookup that records the parameter on the tape under its store name.
inline Var param(Tape& tape, const ParamStore& store, const std::string& name) {
  tape.bind_store(&store);
  return tape.leaf_param(name, store.value(name));
}

// Backward pass that also zero-fills gradients of parameters the loss never
// reached, so optimizers can consume the map uniformly.
inline GradMap backward(Tape& tape, const Var& loss, const ParamStore& store) {
  GradMap grads = tape.backward(loss);
  for (const auto& name : store.names()) {
    if (!grads.count(name)) grads.emplace(name, Tensor::zeros(store.value(name).shape()));
  }
  return grads;
}

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Bias-corrected adaptive-moment update. An all-zero (or absent) gradient
// leaves the parameter value and moments untouched and only advances the
// step count, so unreached parameters are not dragged by stale momentum.
inline void adam_step(ParamStore& params, const GradMap& grads, double lr) {
  for (const auto& [name, g] : grads) {
    if (!params.has(name)) throw UsageError("adam_step: gradient for unknown parameter " + name);
    if (g.shape() != params.value(name).shape()) {
      throw DimensionError("adam_step: gradient shape " + shape_str(g.shape()) +
                           " does not match parameter " + name + " " +
                           shape_str(params.value(name).shape()));
    }
  }
  for (auto& [name, e] : params.entries_) {
    e.step += 1;
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    bool all_zero = true;
    for (double x : g.data()) {
      if (x != 0.0) {
        all_zero = false;
        break;
      }
    }
    if (all_zero) continue;
    if (e.m.size() == 0) {
      e.m = Tensor::zeros(e.value.shape());
      e.v = Tensor::zeros(e.value.shape());
    }
    const double b1t = 1.0 - std::pow(kAdamBeta1, static_cast<double>(e.step));
    const double b2t = 1.0 - std::pow(kAdamBeta2, static_cast<double>(e.step));
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double gi = g(i);
      e.m(i) = kAdamBeta1 * e.m(i) + (1.0 - kAdamBeta1) * gi;
      e.v(i) = kAdamBeta2 * e.v(i) + (1.0 - kAdamBeta2) * gi * gi;
      const double mhat = e.m(i) / b1t;
      const double vhat = e.v(i) / b2t;
      e.value(i) -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
    e.value.check_finite();
  }
}

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
  double min_kink_gap = 0.0;
};

// Central-difference check of tape gradients against a scalar-loss closure.
// The closure must be a deterministic function of the parameter values; it
// is evaluated twice up front to detect hidden state. With threads > 1 the
// coordinate sweep runs on private parameter copies; results are identical
// to the serial sweep.
inline FiniteDiffReport finite_diff_check(const std::function<Var(Tape&, const ParamStore&)>& model,
                                          ParamStore& params, double step,
                                          std::size_t threads = 1) {
  Tape tape;
  Var loss = model(tape, params);
  const double base = loss.value().item();
  GradMap analytic = backward(tape, loss, params);
  const double kink_gap = tape.min_kink_gap();

  {
    Tape t;
    t.set_grad_enabled(false);
    if (model(t, params).value().item() != base) {
      throw DeterminismError("finite_diff_check: closure gave different values at the same point");
    }
  }

  struct Coord {
    std::string name;
    std::size_t index;
    double analytic;
  };
  std::vector<Coord> coords;
  for (const auto& name : params.names()) {
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < grad.size(); ++i) coords.push_back({name, i, grad(i)});
  }

  auto sweep = [&](ParamStore local, std::size_t begin, std::size_t end, FiniteDiffReport* out) {
    auto eval = [&]() {
      Tape t;
      t.set_grad_enabled(false);
      return model(t, local).value().item();
    };
    for (std::size_t c = begin; c < end; ++c) {
      Tensor& value = local.value_mut(coords[c].name);
      const std::size_t i = coords[c].index;
      const double original = value(i);
      value(i) = original + step;
      const double up = eval();
      value(i) = original - step;
      const double down = eval();
      value(i) = original;
      const double numeric = (up - down) / (2.0 * step);
      const double a = coords[c].analytic;
      if (std::abs(a) + std::abs(numeric) <= 1e-8) continue;
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric));
      ++out->coordinates_checked;
      if (rel > out->max_rel_error) {
        out->max_rel_error = rel;
        out->worst_param = coords[c].name;
        out->worst_index = i;
        out->worst_analytic = a;
        out->worst_numeric = numeric;
      }
    }
  };

  FiniteDiffReport report;
  report.min_kink_gap = kink_gap;
  if (threads <= 1) {
    sweep(params, 0, coords.size(), &report);
    return report;
  }
  const std::size_t n_threads = std::min(threads, coords.size());
  std::vector<FiniteDiffReport> partials(n_threads);
  std::vector<std::thread> workers;
  const std::size_t chunk = (coords.size() + n_threads - 1) / n_threads;
  for (std::size_t t = 0; t < n_threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(coords.size(), begin + chunk);
    workers.emplace_back(sweep, params, begin, end, &partials[t]);
  }
  for (auto& w : workers) w.join();
  for (const auto& p : partials) {
    report.coordinates_checked += p.coordinates_checked;
    if (p.max_rel_error > report.max_rel_error) {
      report.max_rel_error = p.max_rel_error;
      report.worst_param = p.worst_param;
      report.worst_index = p.worst_index;
      report.worst_analytic = p.worst_analytic;
      report.worst_numeric = p.worst_numeric;
    }
  }
  return report;
}

// ---- checkpoint format ---------------------------------------------------
//
// Text manifest followed by one contiguous little-endian float64 payload:
//   MMSC-CKPT-1
//   config <16 hex digits>
//   params <count>
//   <name>\t<rank>\t<dim...>\t<byte offset>
//   payload <byte count>
//   <raw doubles>

inline constexpr const char* kCheckpointMagic = "MMSC-CKPT-1";

inline void save_checkpoint(const ParamStore& params, const std::string& path,
                            std::uint64_t config_hash) {
  std::ostringstream head;
  head << kCheckpointMagic << "\n";
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(config_hash));
  head << "config " << hex << "\n";
  const auto names = params.names();
  head << "params " << names.size() << "\n";
  std::size_t offset = 0;
  for (const auto& name : names) {
    const Tensor& t = params.value(name);
    head << name << "\t" << t.rank();
    for (auto d : t.shape()) head << "\t" << d;
    head << "\t" << offset << "\n";
    offset += t.size() * sizeof(double);
  }
  head << "payload " << offset << "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  const std::string h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& name : names) {
    const auto& data = params.value(name).data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw FormatError("write failed: " + path);
}

struct Checkpoint {
  ParamStore params;
  std::uint64_t config_hash = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw FormatError("bad checkpoint magic in " + path);
  }
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) {
    throw FormatError("missing config hash in " + path);
  }
  Checkpoint ckpt;
  ckpt.config_hash = std::stoull(line.substr(7), nullptr, 16);
  if (!std::getline(in, line) || line.rfind("params ", 0) != 0) {
    throw FormatError("missing params count in " + path);
  }
  const std::size_t count = std::stoul(line.substr(7));
  struct Rec {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Rec> recs;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw FormatError("truncated manifest in " + path);
    std::istringstream ls(line);
    Rec r;
    std::size_t rank = 0;
    std::string field;
    if (!std::getline(ls, r.name, '\t')) throw FormatError("bad manifest line: " + line);
    if (!std::getline(ls, field, '\t')) throw FormatError("bad manifest line: " + line);
    rank = std::stoul(field);
    for (std::size_t d = 0; d < rank; ++d) {
      if (!std::getline(ls, field, '\t')) throw FormatError("bad manifest line: " + line);
      r.shape.push_back(std::stoul(field));
    }
    if (!std::getline(ls, field, '\t')) throw FormatError("bad manifest line: " + line);
    r.offset = std::stoul(field);
    recs.push_back(std::move(r));
  }
  if (!std::getline(in, line) || line.rfind("payload ", 0) != 0) {
    throw FormatError("missing payload header in " + path);
  }
  const std::size_t payload_bytes = std::stoul(line.substr(8));
  std::vector<char> payload(payload_bytes);
  in.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (static_cast<std::size_t>(in.gcount()) != payload_bytes) {
    throw FormatError("truncated payload in " + path + " at byte " + std::to_string(in.gcount()));
  }
  for (const auto& r : recs) {
    std::size_t n = 1;
    for (auto d : r.shape) n *= d;
    if (r.offset + n * sizeof(double) > payload_bytes) {
      throw FormatError("manifest entry " + r.name + " exceeds payload in " + path);
    }
    std::vector<double> data(n);
    std::memcpy(data.data(), payload.data() + r.offset, n * sizeof(double));
    ckpt.params.add(r.name, Tensor(r.shape, std::move(data)));
  }
  return ckpt;
}

inline ParamStore load_checkpoint_checked(const std::string& path, std::uint64_t expected_hash) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config_hash != expected_hash) {
    throw IncompatibilityError("checkpoint " + path + " was written under a different configuration");
  }
  return std::move(ckpt.params);
}

}  // namespace mmsc
