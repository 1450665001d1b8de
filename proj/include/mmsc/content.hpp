#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mmsc/autograd.hpp"
#include "mmsc/errors.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/optim.hpp"
#include "mmsc/tensor.hpp"

namespace mmsc {

// ---- embedding file format -------------------------------------------------
// Magic "MMEB1", then int32 LE {item_count, seq_len, dim}, then
// item_count * seq_len * dim little-endian float32 in item-major order.
// Item ids are implicit 0..item_count-1.

inline constexpr char kEmbedMagic[5] = {'M', 'M', 'E', 'B', '1'};

inline void write_embeddings(const std::string& path, const std::vector<Tensor>& sequences) {
  if (sequences.empty()) throw UsageError("write_embeddings: no sequences");
  const std::size_t s = sequences[0].shape()[0];
  const std::size_t d = sequences[0].shape()[1];
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open embedding file for writing: " + path);
  out.write(kEmbedMagic, 5);
  const std::int32_t header[3] = {static_cast<std::int32_t>(sequences.size()),
                                  static_cast<std::int32_t>(s), static_cast<std::int32_t>(d)};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<float> buf(s * d);
  for (const auto& seq : sequences) {
    if (seq.rank() != 2 || seq.shape()[0] != s || seq.shape()[1] != d) {
      throw DimensionError("write_embeddings: inconsistent sequence shape " + shape_str(seq.shape()));
    }
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(seq(i));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw FormatError("write failed: " + path);
}

// Immutable store of per-item content sequences with the mean-pooled vector
// cached once per item. Safe for concurrent reads after load.
class EmbeddingProvider {
 public:
  EmbeddingProvider(std::vector<Tensor> sequences, std::size_t seq_len, std::size_t dim)
      : sequences_(std::move(sequences)), seq_len_(seq_len), dim_(dim) {
    pooled_.reserve(sequences_.size());
    for (const auto& seq : sequences_) pooled_.push_back(pool_sequence(seq));
  }

  std::size_t item_count() const { return sequences_.size(); }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t dim() const { return dim_; }

  const Tensor& sequence(ItemId item) const {
    check(item);
    return sequences_[item];
  }

  // Mean over sequence positions; the raw content vector h consumed by the
  // behavior encoder and the cold-start index.
  const Tensor& pooled(ItemId item) const {
    check(item);
    return pooled_[item];
  }

  static Tensor pool_sequence(const Tensor& seq) {
    const std::size_t s = seq.shape()[0], d = seq.shape()[1];
    Tensor out = Tensor::zeros({d});
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t j = 0; j < d; ++j) out(j) += seq(r, j);
    for (std::size_t j = 0; j < d; ++j) out(j) /= static_cast<double>(s);
    return out;
  }

 private:
  void check(ItemId item) const {
    if (item >= sequences_.size()) {
      throw UsageError("unknown item " + std::to_string(item) + ", provider has " +
                       std::to_string(sequences_.size()) + " items");
    }
  }

  std::vector<Tensor> sequences_;
  std::vector<Tensor> pooled_;
  std::size_t seq_len_;
  std::size_t dim_;
};

inline EmbeddingProvider load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open embedding file: " + path);
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5 || std::memcmp(magic, kEmbedMagic, 5) != 0) {
    throw FormatError("bad magic in " + path + " at byte 0");
  }
  std::int32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (in.gcount() != sizeof(header)) throw FormatError("truncated header in " + path + " at byte 5");
  const std::int64_t count = header[0], s = header[1], d = header[2];
  if (count < 1 || s < 1 || d < 1) {
    throw FormatError("invalid dimensions in " + path + ": count=" + std::to_string(count) +
                      " seq=" + std::to_string(s) + " dim=" + std::to_string(d));
  }
  std::vector<Tensor> sequences;
  sequences.reserve(static_cast<std::size_t>(count));
  std::vector<float> buf(static_cast<std::size_t>(s * d));
  std::size_t offset = 5 + sizeof(header);
  for (std::int64_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != buf.size() * sizeof(float)) {
      throw FormatError("truncated payload in " + path + " at byte " +
                        std::to_string(offset + static_cast<std::size_t>(in.gcount())));
    }
    offset += buf.size() * sizeof(float);
    std::vector<double> data(buf.size());
    for (std::size_t j = 0; j < buf.size(); ++j) data[j] = static_cast<double>(buf[j]);
    sequences.push_back(Tensor::matrix(static_cast<std::size_t>(s), static_cast<std::size_t>(d),
                                       std::move(data)));
  }
  return EmbeddingProvider(std::move(sequences), static_cast<std::size_t>(s),
                           static_cast<std::size_t>(d));
}

// ---- relational fine-tuning attention ---------------------------------------

// Scaled dot-product multi-head self-attention over an S-by-d sequence.
// Heads project to d/L columns each, softmax is scaled by sqrt(d/L), the
// concatenated heads pass through the d-by-d output map. No positional
// encoding: the operation is equivariant to row permutations.
inline Var mh_self_attention(const Var& seq, const std::vector<std::array<Var, 3>>& heads,
                             const Var& out_map) {
  const Tensor& X = seq.value();
  if (X.rank() != 2) throw DimensionError("mh_self_attention: sequence must be rank-2");
  const std::size_t d = X.shape()[1];
  if (heads.empty() || d % heads.size() != 0) {
    throw ConfigError("mh_self_attention: dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads.size()) + " heads");
  }
  const double scale_factor =
      1.0 / std::sqrt(static_cast<double>(d) / static_cast<double>(heads.size()));
  std::vector<Var> outputs;
  outputs.reserve(heads.size());
  for (const auto& [wq, wk, wv] : heads) {
    Var q = matmul(seq, wq);
    Var k = matmul(seq, wk);
    Var v = matmul(seq, wv);
    Var attn = softmax(scale(matmul(q, transpose(k)), scale_factor));
    outputs.push_back(matmul(attn, v));
  }
  return matmul(concat_cols(outputs), out_map);
}

// Per-task parameter names for the relational fine-tuning layer.
struct RelFTNames {
  std::string task;  // "s" or "c"

  std::string wq(std::size_t l) const { return "content." + task + ".h" + std::to_string(l) + ".wq"; }
  std::string wk(std::size_t l) const { return "content." + task + ".h" + std::to_string(l) + ".wk"; }
  std::string wv(std::size_t l) const { return "content." + task + ".h" + std::to_string(l) + ".wv"; }
  std::string wo() const { return "content." + task + ".wo"; }
};

inline RelFTNames relft_names(RelationType r) {
  return RelFTNames{std::string(1, relation_letter(r))};
}

// Task-decoupled content encoding: the relational fine-tuning attention for
// one task followed by mean-pooling over sequence positions.
inline Var encode_content_task(Tape& tape, const ParamStore& store, const EmbeddingProvider& provider,
                               ItemId item, RelationType task, std::size_t n_heads) {
  const RelFTNames names = relft_names(task);
  Var seq = tape.constant(provider.sequence(item));
  std::vector<std::array<Var, 3>> heads;
  heads.reserve(n_heads);
  for (std::size_t l = 0; l < n_heads; ++l) {
    heads.push_back({param(tape, store, names.wq(l)), param(tape, store, names.wk(l)),
                     param(tape, store, names.wv(l))});
  }
  Var attended = mh_self_attention(seq, heads, param(tape, store, names.wo()));
  return mean_rows(attended);
}

}  // namespace mmsc
