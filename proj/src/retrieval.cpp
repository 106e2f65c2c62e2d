#include "commitlink/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace commitlink {
namespace {

double cosine_values(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

Eigen::VectorXd row_vector(const ag::Var& v) {
  return Eigen::Map<const Eigen::VectorXd>(v->value.data(), v->value.size());
}

void check_k(const RankingQuery& q, std::size_t k) {
  if (k < 1 || k > q.candidates.size()) {
    throw std::invalid_argument("k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(q.candidates.size()) + "]");
  }
}

std::size_t relevant_count(const RankingQuery& q) {
  return static_cast<std::size_t>(std::count_if(q.candidates.begin(), q.candidates.end(),
                                                [](const Candidate& c) { return c.label == 1; }));
}

std::size_t relevant_in_top(const RankingQuery& q, std::size_t k) {
  const auto order = rank_order(q);
  std::size_t n = 0;
  for (std::size_t i = 0; i < k; ++i) n += q.candidates[order[i]].label == 1 ? 1 : 0;
  return n;
}

}  // namespace

Prediction predict(const ag::Var& issue_rep, const ag::Var& commit_rep, double threshold) {
  const double s = cosine_values(row_vector(issue_rep), row_vector(commit_rep));
  return {s, s > threshold};
}

Prediction predict(const IssueRecord& issue, const CommitRecord& commit, const Encoder& encoder,
                   const Vocab& vocab, double threshold, const TokenBudgets& budgets) {
  return predict(represent_issue(issue, encoder, vocab, budgets),
                 represent_commit(commit, encoder, vocab, budgets), threshold);
}

std::vector<RankingQuery> build_queries(const std::vector<LinkRecord>& split_links,
                                        const QueryOptions& options,
                                        const std::vector<LinkRecord>& backfill,
                                        const LinkSet& known_true) {
  if (options.candidates < 2) throw std::invalid_argument("need at least two candidates per query");
  std::mt19937_64 rng(options.seed);

  std::vector<std::string> issues;
  {
    std::unordered_set<std::string> seen;
    for (const auto& l : split_links) {
      if (l.label == 1 && seen.insert(l.issue_id).second) issues.push_back(l.issue_id);
    }
  }
  std::unordered_set<std::string> picked(issues.begin(), issues.end());
  if (issues.size() > options.max_issues) {
    std::vector<std::string> shuffled = issues;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    picked = {shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(options.max_issues)};
  }

  std::vector<LinkRecord> picked_links;
  LinkSet truth;
  for (const auto& l : split_links) {
    if (l.label != 1) continue;
    truth.insert(l.issue_id, l.commit_id);
    if (picked.count(l.issue_id)) picked_links.push_back(l);
  }
  auto linked = [&](const std::string& issue, const std::string& commit) {
    return truth.contains(issue, commit) || known_true.contains(issue, commit);
  };

  std::vector<RankingQuery> queries;
  std::size_t index = 0;
  for (const auto& t : picked_links) {
    RankingQuery q;
    char qid[32];
    std::snprintf(qid, sizeof qid, "q%05zu", index++);
    q.query_id = qid;
    q.true_link = t;

    std::vector<Candidate> relevant{{t.commit_id, 1, 0.0}};
    std::unordered_set<std::string> used{t.commit_id};
    if (options.multi_relevant) {
      for (const auto& o : picked_links) {
        if (o.issue_id == t.issue_id && used.insert(o.commit_id).second) {
          relevant.push_back({o.commit_id, 1, 0.0});
        }
      }
    }
    const std::size_t needed = options.candidates - std::min(options.candidates, relevant.size());

    auto eligible_from = [&](const std::vector<LinkRecord>& source) {
      std::vector<std::string> pool;
      for (const auto& o : source) {
        if (o.label != 1 || o.issue_id == t.issue_id || linked(t.issue_id, o.commit_id)) continue;
        if (used.insert(o.commit_id).second) pool.push_back(o.commit_id);
      }
      return pool;
    };
    auto draw = [&](std::vector<std::string>& pool, std::size_t count) {
      for (std::size_t k = 0; k < count; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng)]);
      }
      pool.resize(count);
    };

    std::vector<std::string> distractors = eligible_from(picked_links);
    if (distractors.size() >= needed) {
      draw(distractors, needed);
    } else {
      std::vector<std::string> extra = eligible_from(backfill);
      const std::size_t missing = needed - distractors.size();
      if (extra.size() < missing) {
        throw DataError("query for " + t.issue_id + " has only " +
                        std::to_string(distractors.size() + extra.size()) +
                        " usable distractors; need " + std::to_string(needed));
      }
      draw(extra, missing);
      distractors.insert(distractors.end(), extra.begin(), extra.end());
    }

    q.candidates = std::move(relevant);
    for (auto& d : distractors) q.candidates.push_back({std::move(d), 0, 0.0});
    std::shuffle(q.candidates.begin(), q.candidates.end(), rng);
    queries.push_back(std::move(q));
  }
  return queries;
}

std::vector<std::size_t> rank_order(const RankingQuery& query) {
  std::vector<std::size_t> order(query.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return query.candidates[a].score > query.candidates[b].score;
  });
  return order;
}

std::size_t first_relevant_rank(const RankingQuery& query) {
  const auto order = rank_order(query);
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (query.candidates[order[r]].label == 1) return r + 1;
  }
  return 0;
}

double precision_at_k(const RankingQuery& query, std::size_t k) {
  check_k(query, k);
  return static_cast<double>(relevant_in_top(query, k)) / static_cast<double>(k);
}

double hit_at_k(const RankingQuery& query, std::size_t k) {
  check_k(query, k);
  return relevant_in_top(query, k) > 0 ? 1.0 : 0.0;
}

double reciprocal_rank(const RankingQuery& query) {
  const std::size_t r = first_relevant_rank(query);
  return r == 0 ? 0.0 : 1.0 / static_cast<double>(r);
}

double ndcg_at_k(const RankingQuery& query, std::size_t k) {
  check_k(query, k);
  const auto order = rank_order(query);
  double dcg = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (query.candidates[order[i]].label == 1) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
  }
  const std::size_t ideal = std::min(k, relevant_count(query));
  double idcg = 0.0;
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
  return idcg == 0.0 ? 0.0 : dcg / idcg;
}

double mrr(const std::vector<RankingQuery>& queries) {
  if (queries.empty()) return 0.0;
  double total = 0.0;
  for (const auto& q : queries) total += reciprocal_rank(q);
  return total / static_cast<double>(queries.size());
}

MetricReport aggregate(const std::vector<RankingQuery>& queries) {
  MetricReport r;
  r.queries = queries.size();
  if (queries.empty()) return r;
  for (const auto& q : queries) {
    r.p_at_1 += precision_at_k(q, 1);
    r.p_at_10 += precision_at_k(q, 10);
    r.hit_at_1 += hit_at_k(q, 1);
    r.hit_at_10 += hit_at_k(q, 10);
    r.mrr += reciprocal_rank(q);
    r.ndcg_at_1 += ndcg_at_k(q, 1);
    r.ndcg_at_10 += ndcg_at_k(q, 10);
  }
  const double n = static_cast<double>(queries.size());
  for (double* v : {&r.p_at_1, &r.p_at_10, &r.hit_at_1, &r.hit_at_10, &r.mrr, &r.ndcg_at_1,
                    &r.ndcg_at_10}) {
    *v /= n;
  }
  return r;
}

nlohmann::json MetricReport::to_json() const {
  return {{"P@1", p_at_1},         {"P@10", p_at_10}, {"Hit@1", hit_at_1},
          {"Hit@10", hit_at_10},   {"MRR", mrr},      {"NDCG@1", ndcg_at_1},
          {"NDCG@10", ndcg_at_10}, {"queries", queries}};
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  char line[64];
  out << "metric     value\n";
  const std::pair<const char*, double> rows[] = {
      {"P@1", p_at_1}, {"P@10", p_at_10}, {"Hit@1", hit_at_1}, {"Hit@10", hit_at_10},
      {"MRR", mrr},    {"NDCG@1", ndcg_at_1}, {"NDCG@10", ndcg_at_10}};
  for (const auto& [name, value] : rows) {
    std::snprintf(line, sizeof line, "%-10s %.4f\n", name, value);
    out << line;
  }
  out << "queries    " << queries << '\n';
  return out.str();
}

MetricReport evaluate(std::vector<RankingQuery>& queries, const PairScorer& scorer) {
  for (auto& q : queries) {
    for (auto& c : q.candidates) c.score = scorer(q.true_link.issue_id, c.commit_id);
  }
  return aggregate(queries);
}

ModelScorer::ModelScorer(const Encoder& encoder, const Vocab& vocab,
                         const std::vector<IssueRecord>& issues,
                         const std::vector<CommitRecord>& commits, const TokenBudgets& budgets)
    : encoder_(encoder),
      vocab_(vocab),
      budgets_(budgets),
      issues_(index_by(issues, [](const IssueRecord& r) { return r.issue_id; })),
      commits_(index_by(commits, [](const CommitRecord& r) { return r.commit_id; })) {}

const Eigen::VectorXd& ModelScorer::issue_vector(const std::string& issue_id) {
  auto it = issue_cache_.find(issue_id);
  if (it == issue_cache_.end()) {
    const auto rec = issues_.find(issue_id);
    if (rec == issues_.end()) throw DataError("unknown issue " + issue_id);
    it = issue_cache_
             .emplace(issue_id, row_vector(represent_issue(*rec->second, encoder_, vocab_, budgets_)))
             .first;
  }
  return it->second;
}

const Eigen::VectorXd& ModelScorer::commit_vector(const std::string& commit_id) {
  auto it = commit_cache_.find(commit_id);
  if (it == commit_cache_.end()) {
    const auto rec = commits_.find(commit_id);
    if (rec == commits_.end()) throw DataError("unknown commit " + commit_id);
    it = commit_cache_
             .emplace(commit_id,
                      row_vector(represent_commit(*rec->second, encoder_, vocab_, budgets_)))
             .first;
  }
  return it->second;
}

double ModelScorer::operator()(const std::string& issue_id, const std::string& commit_id) {
  return cosine_values(issue_vector(issue_id), commit_vector(commit_id));
}

void write_metric_report(const std::string& json_path, const std::string& table_path,
                         const MetricReport& report) {
  std::ofstream js(json_path, std::ios::binary);
  if (!js) throw DataError("cannot write " + json_path);
  js << report.to_json().dump(2) << '\n';
  std::ofstream tab(table_path, std::ios::binary);
  if (!tab) throw DataError("cannot write " + table_path);
  tab << report.to_table();
}

void write_query_scores(const std::string& path, const std::vector<RankingQuery>& queries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "query_id,candidate_id,score,label,rank\n";
  char score[32];
  for (const auto& q : queries) {
    const auto order = rank_order(q);
    std::vector<std::size_t> rank(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
    for (std::size_t i = 0; i < q.candidates.size(); ++i) {
      const auto& c = q.candidates[i];
      std::snprintf(score, sizeof score, "%.12g", c.score);
      out << q.query_id << ',' << c.commit_id << ',' << score << ',' << c.label << ',' << rank[i]
          << '\n';
    }
  }
}

CorpusStats CorpusStats::build(const std::vector<Tokens>& documents) {
  CorpusStats s;
  s.n_docs_ = documents.size();
  for (const auto& doc : documents) {
    const std::unordered_set<std::string> terms(doc.begin(), doc.end());
    for (const auto& t : terms) ++s.df_[t];
  }
  return s;
}

std::size_t CorpusStats::df(const std::string& term) const {
  const auto it = df_.find(term);
  return it == df_.end() ? 0 : it->second;
}

double CorpusStats::idf(const std::string& term) const {
  return std::log(static_cast<double>(n_docs_) / (1.0 + static_cast<double>(df(term)))) + 1.0;
}

Tokens vsm_issue_document(const IssueRecord& issue) { return issue.text_tokens(); }

Tokens vsm_commit_document(const CommitRecord& commit) {
  Tokens doc = commit.message_tokens;
  const Tokens code = commit.code_tokens();
  doc.insert(doc.end(), code.begin(), code.end());
  return doc;
}

double vsm_score(const Tokens& issue_doc, const Tokens& commit_doc, const CorpusStats& stats) {
  auto weights = [&stats](const Tokens& doc) {
    std::map<std::string, double> w;
    for (const auto& t : doc) w[t] += 1.0;
    for (auto& [t, v] : w) v *= stats.idf(t);
    return w;
  };
  const auto a = weights(issue_doc);
  const auto b = weights(commit_doc);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, v] : a) {
    na += v * v;
    const auto it = b.find(t);
    if (it != b.end()) dot += v * it->second;
  }
  for (const auto& [t, v] : b) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

CorpusStats vsm_stats_for(const std::vector<LinkRecord>& links,
                          const std::vector<IssueRecord>& issues,
                          const std::vector<CommitRecord>& commits) {
  const auto issue_index = index_by(issues, [](const IssueRecord& r) { return r.issue_id; });
  const auto commit_index = index_by(commits, [](const CommitRecord& r) { return r.commit_id; });
  std::vector<Tokens> docs;
  std::unordered_set<std::string> seen_issue, seen_commit;
  for (const auto& l : links) {
    if (seen_issue.insert(l.issue_id).second) {
      const auto it = issue_index.find(l.issue_id);
      if (it != issue_index.end()) docs.push_back(vsm_issue_document(*it->second));
    }
    if (seen_commit.insert(l.commit_id).second) {
      const auto it = commit_index.find(l.commit_id);
      if (it != commit_index.end()) docs.push_back(vsm_commit_document(*it->second));
    }
  }
  return CorpusStats::build(docs);
}

}  // namespace commitlink
