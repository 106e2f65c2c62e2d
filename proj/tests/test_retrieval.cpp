#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "commitlink/retrieval.hpp"
#include "fixture.hpp"

using namespace commitlink;

namespace {

RankingQuery query_with_relevant_at(std::size_t rank, std::size_t n = 100) {
  RankingQuery q;
  q.query_id = "q";
  for (std::size_t i = 0; i < n; ++i) {
    q.candidates.push_back({"c" + std::to_string(i), 0, 1.0 - static_cast<double>(i) / n});
  }
  q.candidates[rank - 1].label = 1;
  return q;
}

// Rank of candidate i counted pairwise: everyone scoring higher, plus
// equal scores at lower indices.
std::size_t brute_rank(const RankingQuery& q, std::size_t i) {
  std::size_t r = 1;
  for (std::size_t j = 0; j < q.candidates.size(); ++j) {
    const double sj = q.candidates[j].score, si = q.candidates[i].score;
    if (sj > si || (sj == si && j < i)) ++r;
  }
  return r;
}

struct BruteMetrics {
  double p1, p10, h1, h10, rr, n1, n10;
};

BruteMetrics brute(const RankingQuery& q) {
  std::vector<std::size_t> rel_ranks;
  for (std::size_t i = 0; i < q.candidates.size(); ++i) {
    if (q.candidates[i].label == 1) rel_ranks.push_back(brute_rank(q, i));
  }
  auto count_top = [&](std::size_t k) {
    std::size_t n = 0;
    for (auto r : rel_ranks) n += r <= k ? 1 : 0;
    return static_cast<double>(n);
  };
  auto ndcg = [&](std::size_t k) {
    double dcg = 0, idcg = 0;
    for (auto r : rel_ranks) {
      if (r <= k) dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
    for (std::size_t i = 1; i <= std::min(k, rel_ranks.size()); ++i) {
      idcg += 1.0 / std::log2(static_cast<double>(i) + 1.0);
    }
    return idcg == 0 ? 0.0 : dcg / idcg;
  };
  std::size_t best = q.candidates.size() + 1;
  for (auto r : rel_ranks) best = std::min(best, r);
  return {count_top(1), count_top(10) / 10.0, count_top(1) > 0 ? 1.0 : 0.0,
          count_top(10) > 0 ? 1.0 : 0.0, rel_ranks.empty() ? 0.0 : 1.0 / static_cast<double>(best),
          ndcg(1), ndcg(10)};
}

}  // namespace

TEST(Predict, StrictThreshold) {
  ag::Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0.6, 0.8;
  const auto p = predict(ag::constant(a), ag::constant(b));
  EXPECT_NEAR(p.score, 0.6, 1e-12);
  EXPECT_TRUE(p.is_link);
  b << 0.4, std::sqrt(0.84);
  EXPECT_NEAR(predict(ag::constant(a), ag::constant(b)).score, 0.4, 1e-12);
  EXPECT_FALSE(predict(ag::constant(a), ag::constant(b)).is_link);
  const auto same = predict(ag::constant(a), ag::constant(a));
  EXPECT_DOUBLE_EQ(same.score, 1.0);
  EXPECT_TRUE(same.is_link);
}

TEST(Predict, ExactBoundaryIsNotALink) {
  ag::Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 1, 0;
  EXPECT_FALSE(predict(ag::constant(a), ag::constant(b), 1.0).is_link);
}

TEST(Metrics, BestCase) {
  const auto q = query_with_relevant_at(1);
  EXPECT_EQ(precision_at_k(q, 1), 1.0);
  EXPECT_DOUBLE_EQ(precision_at_k(q, 10), 0.1);
  EXPECT_EQ(hit_at_k(q, 10), 1.0);
  EXPECT_EQ(reciprocal_rank(q), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k(q, 10), 1.0);
}

TEST(Metrics, RankFour) {
  const auto q = query_with_relevant_at(4);
  EXPECT_DOUBLE_EQ(reciprocal_rank(q), 0.25);
  EXPECT_EQ(hit_at_k(q, 1), 0.0);
  EXPECT_EQ(hit_at_k(q, 10), 1.0);
}

TEST(Metrics, RankTwoNdcg) {
  EXPECT_NEAR(ndcg_at_k(query_with_relevant_at(2), 10), 1.0 / std::log2(3.0), 1e-12);
  EXPECT_NEAR(ndcg_at_k(query_with_relevant_at(2), 10), 0.63093, 1e-4);
  EXPECT_EQ(ndcg_at_k(query_with_relevant_at(11), 10), 0.0);
}

TEST(Metrics, KOutOfRangeThrows) {
  const auto q = query_with_relevant_at(1);
  EXPECT_THROW(precision_at_k(q, 101), std::invalid_argument);
  EXPECT_THROW(ndcg_at_k(q, 0), std::invalid_argument);
}

TEST(Metrics, TiesBreakByIndex) {
  RankingQuery q;
  q.candidates = {{"a", 0, 0.5}, {"b", 1, 0.5}, {"c", 0, 0.5}};
  EXPECT_EQ(rank_order(q), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(first_relevant_rank(q), 2u);
}

TEST(Metrics, MatchBruteForceOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 20);
  std::uniform_int_distribution<int> n_rel(1, 3);
  for (int trial = 0; trial < 300; ++trial) {
    RankingQuery q;
    for (int i = 0; i < 100; ++i) {
      // Coarse scores force plenty of ties.
      const double s = trial % 2 ? u(rng) : coarse(rng) / 20.0;
      q.candidates.push_back({"c" + std::to_string(i), 0, s});
    }
    const int rel = trial % 3 == 0 ? n_rel(rng) : 1;
    for (int r = 0; r < rel; ++r) q.candidates[static_cast<std::size_t>(coarse(rng) * 4)].label = 1;
    const auto b = brute(q);
    EXPECT_NEAR(precision_at_k(q, 1), b.p1, 1e-12);
    EXPECT_NEAR(precision_at_k(q, 10), b.p10, 1e-12);
    EXPECT_NEAR(hit_at_k(q, 1), b.h1, 1e-12);
    EXPECT_NEAR(hit_at_k(q, 10), b.h10, 1e-12);
    EXPECT_NEAR(reciprocal_rank(q), b.rr, 1e-12);
    EXPECT_NEAR(ndcg_at_k(q, 1), b.n1, 1e-12);
    EXPECT_NEAR(ndcg_at_k(q, 10), b.n10, 1e-12);
  }
}

TEST(Metrics, BoundsAndIdentities) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pos(0, 99);
  std::vector<RankingQuery> qs;
  for (int trial = 0; trial < 200; ++trial) {
    RankingQuery q;
    for (int i = 0; i < 100; ++i) q.candidates.push_back({"c", 0, u(rng)});
    q.candidates[pos(rng)].label = 1;
    EXPECT_EQ(precision_at_k(q, 1), hit_at_k(q, 1));
    EXPECT_DOUBLE_EQ(precision_at_k(q, 10), hit_at_k(q, 10) / 10.0);
    for (double m : {precision_at_k(q, 10), ndcg_at_k(q, 10), reciprocal_rank(q)}) {
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
    }
    qs.push_back(q);
  }
  const auto r = aggregate(qs);
  EXPECT_EQ(r.p_at_1, r.hit_at_1);
  EXPECT_EQ(r.queries, 200u);
}

TEST(Metrics, ImprovingRankNeverHurts) {
  for (std::size_t rank = 100; rank > 1; --rank) {
    const auto worse = query_with_relevant_at(rank);
    const auto better = query_with_relevant_at(rank - 1);
    for (std::size_t k : {1u, 10u}) {
      EXPECT_GE(precision_at_k(better, k), precision_at_k(worse, k));
      EXPECT_GE(hit_at_k(better, k), hit_at_k(worse, k));
      EXPECT_GE(ndcg_at_k(better, k), ndcg_at_k(worse, k));
    }
    EXPECT_GT(reciprocal_rank(better), reciprocal_rank(worse));
  }
}

TEST(Evaluate, OracleScoresArePerfect) {
  std::vector<RankingQuery> qs;
  for (int i = 0; i < 10; ++i) {
    RankingQuery q;
    q.true_link = {"I" + std::to_string(i), "t" + std::to_string(i), 1, Provenance::tagged_true};
    for (int c = 0; c < 100; ++c) q.candidates.push_back({"d" + std::to_string(c), 0, 0.0});
    q.candidates[static_cast<std::size_t>(i * 7)] = {q.true_link.commit_id, 1, 0.0};
    qs.push_back(q);
  }
  const auto r = evaluate(qs, [](const std::string&, const std::string& c) {
    return c[0] == 't' ? 1.0 : 0.0;
  });
  EXPECT_EQ(r.p_at_1, 1.0);
  EXPECT_EQ(r.hit_at_1, 1.0);
  EXPECT_EQ(r.hit_at_10, 1.0);
  EXPECT_EQ(r.mrr, 1.0);
  EXPECT_EQ(r.ndcg_at_1, 1.0);
  EXPECT_EQ(r.ndcg_at_10, 1.0);
  EXPECT_DOUBLE_EQ(r.p_at_10, 0.1);
}

TEST(Evaluate, RandomScoresNearHarmonicMean) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RankingQuery> qs(10000);
  for (auto& q : qs) {
    q.true_link.issue_id = "I";
    for (int c = 0; c < 100; ++c) q.candidates.push_back({"c", c == 0 ? 1 : 0, 0.0});
  }
  const auto r = evaluate(qs, [&](const std::string&, const std::string&) { return u(rng); });
  double expected = 0.0;
  for (int k = 1; k <= 100; ++k) expected += 1.0 / k;
  expected /= 100.0;
  EXPECT_NEAR(r.mrr, expected, 0.01);
}

TEST(MetricReport, JsonAndTable) {
  MetricReport r;
  r.mrr = 0.5;
  r.queries = 3;
  const auto j = r.to_json();
  for (const char* key : {"P@1", "P@10", "Hit@1", "Hit@10", "MRR", "NDCG@1", "NDCG@10", "queries"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_NE(r.to_table().find("MRR"), std::string::npos);
}

TEST(QueryScores, CsvHasRanks) {
  auto q = query_with_relevant_at(3, 5);
  q.query_id = "q00000";
  const std::string path = ::testing::TempDir() + "scores.csv";
  write_query_scores(path, {q});
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "query_id,candidate_id,score,label,rank");
  std::size_t rows = 0;
  bool saw_relevant = false;
  while (std::getline(in, line)) {
    ++rows;
    if (line.rfind("q00000,c2,", 0) == 0) {
      saw_relevant = true;
      EXPECT_EQ(line.substr(line.size() - 4), ",1,3");
    }
  }
  EXPECT_EQ(rows, 5u);
  EXPECT_TRUE(saw_relevant);
}

namespace {

std::vector<LinkRecord> star_links(int issues, int per_issue) {
  std::vector<LinkRecord> out;
  for (int i = 0; i < issues; ++i) {
    for (int k = 0; k < per_issue; ++k) {
      out.push_back({"I" + std::to_string(i), "c" + std::to_string(i) + "_" + std::to_string(k), 1,
                     Provenance::tagged_true});
    }
  }
  return out;
}

}  // namespace

TEST(BuildQueries, ShapeAndDistractorRules) {
  const auto links = star_links(60, 2);
  LinkSet truth(links);
  const auto qs = build_queries(links, {}, {}, truth);
  EXPECT_EQ(qs.size(), links.size());
  for (const auto& q : qs) {
    ASSERT_EQ(q.candidates.size(), 100u);
    std::set<std::string> ids;
    int relevant = 0;
    for (const auto& c : q.candidates) {
      ids.insert(c.commit_id);
      relevant += c.label;
      if (c.label == 0) EXPECT_FALSE(truth.contains(q.true_link.issue_id, c.commit_id));
    }
    EXPECT_EQ(ids.size(), 100u);
    EXPECT_EQ(relevant, 1);
  }
}

TEST(BuildQueries, SmallSplitUsesAllIssuesAndBackfills) {
  const auto split = star_links(50, 1);
  auto other = star_links(120, 1);
  for (auto& l : other) l.issue_id = "X" + l.issue_id, l.commit_id = "x" + l.commit_id;
  const auto qs = build_queries(split, {}, other);
  EXPECT_EQ(qs.size(), 50u);
  std::set<std::string> issues;
  for (const auto& q : qs) {
    issues.insert(q.true_link.issue_id);
    EXPECT_EQ(q.candidates.size(), 100u);
  }
  EXPECT_EQ(issues.size(), 50u);
}

TEST(BuildQueries, TooFewDistractorsIsError) {
  EXPECT_THROW(build_queries(star_links(40, 1), {}), DataError);
}

TEST(BuildQueries, MaxIssuesCapsDistinctIssues) {
  QueryOptions o;
  o.max_issues = 10;
  o.candidates = 5;
  const auto qs = build_queries(star_links(40, 2), o);
  std::set<std::string> issues;
  for (const auto& q : qs) issues.insert(q.true_link.issue_id);
  EXPECT_EQ(issues.size(), 10u);
  EXPECT_EQ(qs.size(), 20u);
}

TEST(BuildQueries, SameSeedSameQueries) {
  QueryOptions o;
  o.seed = 4;
  o.max_issues = 30;
  o.candidates = 20;
  const auto links = star_links(150, 1);
  const auto a = build_queries(links, o);
  const auto b = build_queries(links, o);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].true_link, b[i].true_link);
    ASSERT_EQ(a[i].candidates.size(), b[i].candidates.size());
    for (std::size_t c = 0; c < a[i].candidates.size(); ++c) {
      EXPECT_EQ(a[i].candidates[c].commit_id, b[i].candidates[c].commit_id);
    }
  }
}

TEST(BuildQueries, MultiRelevantAddsSiblings) {
  QueryOptions o;
  o.multi_relevant = true;
  o.candidates = 10;
  const auto qs = build_queries(star_links(20, 3), o);
  for (const auto& q : qs) {
    int relevant = 0;
    for (const auto& c : q.candidates) relevant += c.label;
    EXPECT_EQ(relevant, 3);
    EXPECT_EQ(q.candidates.size(), 10u);
  }
}

TEST(Vsm, IdentityAndOrthogonality) {
  const auto stats = CorpusStats::build({{"alpha", "beta"}, {"gamma"}});
  EXPECT_NEAR(vsm_score({"alpha", "beta"}, {"alpha", "beta"}, stats), 1.0, 1e-12);
  EXPECT_EQ(vsm_score({"alpha"}, {"gamma"}, stats), 0.0);
  EXPECT_EQ(vsm_score({}, {"gamma"}, stats), 0.0);
}

TEST(Vsm, HandComputedThreeDocuments) {
  // N = 3; df: a 1, b 2, c 2, d 1. idf = ln(N / (1 + df)) + 1, so
  // idf(a) = idf(d) = ln 1.5 + 1 and idf(b) = idf(c) = 1.
  const auto stats = CorpusStats::build({{"a", "b"}, {"b", "c"}, {"c", "c", "d"}});
  EXPECT_EQ(stats.documents(), 3u);
  EXPECT_EQ(stats.df("c"), 2u);
  EXPECT_NEAR(stats.idf("a"), 1.4054651081081644, 1e-12);
  EXPECT_NEAR(stats.idf("b"), 1.0, 1e-12);
  // [a b] vs [b c c]: dot 1, norms sqrt(idf_a^2 + 1) and sqrt(5).
  EXPECT_NEAR(vsm_score({"a", "b"}, {"b", "c", "c"}, stats), 0.25926701574872857, 1e-9);
  // [a d] vs [a a c]: dot 2 idf_a^2.
  EXPECT_NEAR(vsm_score({"a", "d"}, {"a", "a", "c"}, stats), 0.6662046311324217, 1e-9);
}

TEST(Vsm, DocumentsAndStatsFromLinks) {
  const auto fx = commitlink::testing::make_fixture(12, 1, 10);
  const auto stats = vsm_stats_for(fx.splits.train, fx.issues, fx.commits);
  std::set<std::string> issues, commits;
  for (const auto& l : fx.splits.train) {
    issues.insert(l.issue_id);
    commits.insert(l.commit_id);
  }
  EXPECT_EQ(stats.documents(), issues.size() + commits.size());
  const auto& c = fx.commits.front();
  const Tokens doc = vsm_commit_document(c);
  EXPECT_EQ(doc.size(), c.message_tokens.size() + c.code_tokens().size());
}

TEST(ModelScorer, MatchesDirectPrediction) {
  const auto fx = commitlink::testing::make_fixture(12, 1, 10);
  const Encoder enc(commitlink::testing::tiny_student(8), fx.vocab.size());
  ModelScorer scorer(enc, fx.vocab, fx.issues, fx.commits);
  const auto& l = fx.truth.front();
  const IssueRecord* issue = nullptr;
  const CommitRecord* commit = nullptr;
  for (const auto& i : fx.issues) if (i.issue_id == l.issue_id) issue = &i;
  for (const auto& c : fx.commits) if (c.commit_id == l.commit_id) commit = &c;
  ASSERT_TRUE(issue && commit);
  EXPECT_NEAR(scorer(l.issue_id, l.commit_id), predict(*issue, *commit, enc, fx.vocab).score, 1e-12);
}
