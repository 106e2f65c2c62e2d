#pragma once

// Thresholded prediction, the 1-true-vs-99-distractor ranking protocol,
// ranking metrics and the TF-IDF baseline.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "commitlink/encoder.hpp"
#include "commitlink/links.hpp"

namespace commitlink {

struct Prediction {
  double score = 0.0;
  bool is_link = false;
};

// Cosine of two representations; a link iff score > threshold.
Prediction predict(const ag::Var& issue_rep, const ag::Var& commit_rep, double threshold = 0.5);
Prediction predict(const IssueRecord& issue, const CommitRecord& commit, const Encoder& encoder,
                   const Vocab& vocab, double threshold = 0.5, const TokenBudgets& budgets = {});

struct Candidate {
  std::string commit_id;
  int label = 0;
  double score = 0.0;
};

struct RankingQuery {
  std::string query_id;
  LinkRecord true_link;
  std::vector<Candidate> candidates;
};

struct QueryOptions {
  std::size_t max_issues = 1000;
  std::size_t candidates = 100;
  std::uint64_t seed = 0;
  // Put the query issue's other true commits back in as relevant
  // candidates instead of excluding them.
  bool multi_relevant = false;
};

// Picks up to max_issues issues from `split_links`; every true link of a
// picked issue becomes a query whose distractors are drawn without
// replacement from other-issue links of the picked set. When that set is
// too small, `backfill` links (other issues only) top it up. Commits truly
// linked to the query issue (per `known_true`, plus the split) are never
// distractors. Throws DataError when a query cannot be filled.
std::vector<RankingQuery> build_queries(const std::vector<LinkRecord>& split_links,
                                        const QueryOptions& options,
                                        const std::vector<LinkRecord>& backfill = {},
                                        const LinkSet& known_true = {});

// Candidate indices by descending score, ties by ascending index.
std::vector<std::size_t> rank_order(const RankingQuery& query);
// 1-based rank of the first relevant candidate.
std::size_t first_relevant_rank(const RankingQuery& query);

double precision_at_k(const RankingQuery& query, std::size_t k);
double hit_at_k(const RankingQuery& query, std::size_t k);
double reciprocal_rank(const RankingQuery& query);
double ndcg_at_k(const RankingQuery& query, std::size_t k);
double mrr(const std::vector<RankingQuery>& queries);

struct MetricReport {
  double p_at_1 = 0.0;
  double p_at_10 = 0.0;
  double hit_at_1 = 0.0;
  double hit_at_10 = 0.0;
  double mrr = 0.0;
  double ndcg_at_1 = 0.0;
  double ndcg_at_10 = 0.0;
  std::size_t queries = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

MetricReport aggregate(const std::vector<RankingQuery>& queries);

using PairScorer = std::function<double(const std::string& issue_id, const std::string& commit_id)>;

// Scores every candidate in place and aggregates.
MetricReport evaluate(std::vector<RankingQuery>& queries, const PairScorer& scorer);

// Scores with cached student representations.
class ModelScorer {
 public:
  ModelScorer(const Encoder& encoder, const Vocab& vocab, const std::vector<IssueRecord>& issues,
              const std::vector<CommitRecord>& commits, const TokenBudgets& budgets = {});

  double operator()(const std::string& issue_id, const std::string& commit_id);
  const Eigen::VectorXd& issue_vector(const std::string& issue_id);
  const Eigen::VectorXd& commit_vector(const std::string& commit_id);

 private:
  const Encoder& encoder_;
  const Vocab& vocab_;
  TokenBudgets budgets_;
  std::unordered_map<std::string, const IssueRecord*> issues_;
  std::unordered_map<std::string, const CommitRecord*> commits_;
  std::unordered_map<std::string, Eigen::VectorXd> issue_cache_;
  std::unordered_map<std::string, Eigen::VectorXd> commit_cache_;
};

void write_metric_report(const std::string& json_path, const std::string& table_path,
                         const MetricReport& report);
// Columns: query_id, candidate_id, score, label, rank.
void write_query_scores(const std::string& path, const std::vector<RankingQuery>& queries);

// Document frequencies over a training corpus.
class CorpusStats {
 public:
  CorpusStats() = default;
  static CorpusStats build(const std::vector<Tokens>& documents);

  double idf(const std::string& term) const;  // ln(N / (1 + df)) + 1
  std::size_t documents() const { return n_docs_; }
  std::size_t df(const std::string& term) const;

 private:
  std::size_t n_docs_ = 0;
  std::unordered_map<std::string, std::size_t> df_;
};

Tokens vsm_issue_document(const IssueRecord& issue);
// Message tokens followed by every diff token.
Tokens vsm_commit_document(const CommitRecord& commit);

// Cosine of raw-count TF-IDF vectors; 0 when either vector is empty.
double vsm_score(const Tokens& issue_doc, const Tokens& commit_doc, const CorpusStats& stats);

// Stats over the distinct issues and commits of the given links.
CorpusStats vsm_stats_for(const std::vector<LinkRecord>& links,
                          const std::vector<IssueRecord>& issues,
                          const std::vector<CommitRecord>& commits);

}  // namespace commitlink
