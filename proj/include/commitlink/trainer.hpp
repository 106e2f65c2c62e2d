#pragma once

// Multi-task fine-tuning of the student: recovery loss over true and
// generated false links, in-batch contrastive loss over commits, and the
// auxiliary issue-code classifier.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "commitlink/encoder.hpp"
#include "commitlink/links.hpp"
#include "commitlink/retrieval.hpp"

namespace commitlink {

struct TrainConfig {
  int batch_size = 16;
  double lr = 4e-5;
  double lr_decay = 0.8;
  int lr_decay_every = 6;
  double tau = 0.07;
  double lambda_cl = 1.0;
  double lambda_aux = 1.0;
  int epochs = 30;
  std::uint64_t seed = 0;
  FalseLinkPolicy false_links;
  TokenBudgets budgets;

  void validate() const;
  // Epochs are 1-based.
  double lr_at(int epoch) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// True links of one step plus the false links generated for it. group[i]
// numbers the issue of true_links[i] in order of first appearance.
struct Batch {
  std::vector<LinkRecord> true_links;
  std::vector<LinkRecord> false_links;
  std::vector<int> group;

  static Batch from_true_links(std::vector<LinkRecord> links);
  std::size_t distinct_issues() const;
};

// Sum over links of |y - cos(s, q)|.
ag::Var main_loss(std::span<const ag::Var> issue_reps, std::span<const ag::Var> commit_reps,
                  std::span<const int> labels);

struct ContrastiveStats {
  std::size_t anchors = 0;
  std::size_t skipped = 0;  // anchors with no negative
};

// Sum over anchors of -log(exp(s+/tau) / (exp(s+/tau) + sum_neg exp(s-/tau)))
// with cosine similarity. The positive is the first other same-group
// commit, else the anchor itself; negatives are every other-group commit.
ag::Var contrastive_loss(std::span<const ag::Var> commit_reps, std::span<const int> groups,
                         double tau, ContrastiveStats* stats = nullptr);

// f2(tanh(f1([s; c; |c - s|]))) with f1: 3d -> d and f2: d -> 2.
class AuxClassifier {
 public:
  AuxClassifier(int dim, std::uint64_t seed);

  int dim() const { return dim_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const ag::Var& w1() const { return params_[0]; }
  const ag::Var& b1() const { return params_[1]; }
  const ag::Var& w2() const { return params_[2]; }
  const ag::Var& b2() const { return params_[3]; }

  void save(const std::string& path) const;
  static AuxClassifier load(const std::string& path);

 private:
  int dim_;
  ParameterStore params_;
};

// 1 x 2 logits.
ag::Var aux_forward(const ag::Var& issue_pooled, const ag::Var& code_pooled,
                    const AuxClassifier& clf);
std::array<double, 2> aux_probabilities(const ag::Var& issue_pooled, const ag::Var& code_pooled,
                                        const AuxClassifier& clf);
// Sum of -log(max(p_label, 1e-12)).
ag::Var aux_loss(std::span<const ag::Var> issue_pooled, std::span<const ag::Var> code_pooled,
                 std::span<const int> labels, const AuxClassifier& clf);

ag::Var total_loss(const ag::Var& main, const ag::Var& cl, const ag::Var& aux,
                   const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double main = 0.0;  // per-batch means
  double cl = 0.0;
  double aux = 0.0;
  double total = 0.0;
  double valid_mrr = 0.0;
  std::size_t false_links = 0;
  std::size_t collisions = 0;
  std::size_t fallbacks = 0;
  std::size_t skipped_anchors = 0;
};

struct TrainData {
  const std::vector<IssueRecord>* issues = nullptr;
  const std::vector<CommitRecord>* commits = nullptr;
  std::vector<LinkRecord> train_links;
  std::vector<RankingQuery> valid_queries;
  std::vector<IssueCodeLink> aux_links;
  // Every known true link, all splits; false links must avoid it.
  LinkSet known_true;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_valid_mrr = 0.0;
  std::size_t collisions = 0;
};

struct TrainHooks {
  // Sees every generated false-link set.
  std::function<void(int epoch, const std::vector<LinkRecord>& false_links)> on_false_links;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Leaves the student and classifier at the best-validation-MRR epoch.
// When `out_dir` is set, writes student_best.ckpt, aux_best.ckpt and
// history.csv there.
TrainResult train(Encoder& student, AuxClassifier& clf, const Vocab& vocab,
                  const TrainData& data, const TrainConfig& cfg,
                  const std::optional<std::string>& out_dir = std::nullopt,
                  const TrainHooks& hooks = {});

void write_history(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace commitlink
