#pragma once

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsc/errors.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/synth.hpp"

namespace mmsc {

struct ItemMeta {
  ItemId id = 0;
  std::string text;
};

// Human-readable metadata records; cluster labels are included when ground
// truth is available so out-of-process judges have something to read.
class MetadataCatalog {
 public:
  explicit MetadataCatalog(std::size_t n_items, const GroundTruth* truth = nullptr) {
    metas_.reserve(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
      ItemMeta m;
      m.id = static_cast<ItemId>(i);
      m.text = "item " + std::to_string(i);
      if (truth && i < truth->cluster_of.size()) {
        m.text += " (cluster " + std::to_string(truth->cluster_of[i]) + ")";
      }
      metas_.push_back(std::move(m));
    }
  }

  const ItemMeta& meta(ItemId item) const {
    if (item >= metas_.size()) {
      throw UsageError("metadata for unknown item " + std::to_string(item));
    }
    return metas_[item];
  }

 private:
  std::vector<ItemMeta> metas_;
};

// Yes/no relationship classifier used to filter behavior-derived pairs.
// Implementations must be deterministic for fixed inputs; is_related may
// throw JudgeError, which callers treat as a skipped pair.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual bool is_related(const ItemMeta& a, const ItemMeta& b, RelationType relation) = 0;
  virtual std::string name() const = 0;
};

class ConstJudge final : public Judge {
 public:
  explicit ConstJudge(bool verdict) : verdict_(verdict) {}
  bool is_related(const ItemMeta&, const ItemMeta&, RelationType) override { return verdict_; }
  std::string name() const override { return verdict_ ? "always_yes" : "always_no"; }

 private:
  bool verdict_;
};

// Answers from planted ground truth: yes exactly when the pair is a true
// pair for the queried relation.
class OracleJudge final : public Judge {
 public:
  explicit OracleJudge(const GroundTruth& truth) : truth_(&truth) {}

  bool is_related(const ItemMeta& a, const ItemMeta& b, RelationType relation) override {
    return truth_->is_true_pair(relation, a.id, b.id);
  }

  std::string name() const override { return "oracle"; }

 private:
  const GroundTruth* truth_;
};

// Out-of-process judge speaking line-delimited JSON over the child's
// standard streams: request {id, relation, text_a, text_b}, response
// {id, verdict}. Lets a real LLM be attached without linking it in.
class ExternalJudge final : public Judge {
 public:
  explicit ExternalJudge(const std::string& command) : command_(command) { start(); }

  ExternalJudge(const ExternalJudge&) = delete;
  ExternalJudge& operator=(const ExternalJudge&) = delete;

  ~ExternalJudge() override { stop(); }

  bool is_related(const ItemMeta& a, const ItemMeta& b, RelationType relation) override {
    const std::uint64_t id = next_id_++;
    nlohmann::json req{{"id", id},
                       {"relation", relation_name(relation)},
                       {"text_a", a.text},
                       {"text_b", b.text}};
    const std::string line = req.dump() + "\n";
    if (write_all(line) != 0) throw JudgeError("judge process not accepting requests");
    std::string resp = read_line();
    try {
      const auto parsed = nlohmann::json::parse(resp);
      if (parsed.at("id").get<std::uint64_t>() != id) {
        throw JudgeError("judge response id mismatch");
      }
      const std::string verdict = parsed.at("verdict").get<std::string>();
      if (verdict == "yes") return true;
      if (verdict == "no") return false;
      throw JudgeError("judge verdict must be yes or no, got '" + verdict + "'");
    } catch (const nlohmann::json::exception& e) {
      throw JudgeError(std::string("bad judge response: ") + e.what());
    }
  }

  std::string name() const override { return "external"; }

 private:
  void start() {
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) {
      throw JudgeError("cannot create judge pipes");
    }
    pid_ = fork();
    if (pid_ < 0) throw JudgeError("cannot fork judge process");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  void stop() {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
    write_fd_ = read_fd_ = -1;
    pid_ = -1;
  }

  int write_all(const std::string& s) {
    std::size_t off = 0;
    while (off < s.size()) {
      const ssize_t n = write(write_fd_, s.data() + off, s.size() - off);
      if (n <= 0) {
        if (errno == EINTR) continue;
        return -1;
      }
      off += static_cast<std::size_t>(n);
    }
    return 0;
  }

  std::string read_line() {
    std::string line;
    char c;
    for (;;) {
      const ssize_t n = read(read_fd_, &c, 1);
      if (n == 1) {
        if (c == '\n') return line;
        line.push_back(c);
      } else if (n == 0) {
        throw JudgeError("judge process closed its output");
      } else if (errno != EINTR) {
        throw JudgeError(std::string("judge read failed: ") + std::strerror(errno));
      }
    }
  }

  std::string command_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::uint64_t next_id_ = 1;
};

}  // namespace mmsc
