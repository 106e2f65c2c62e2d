#pragma once

// Small preprocessed synthetic project held in memory.

#include "commitlink/corpus.hpp"
#include "commitlink/encoder.hpp"
#include "commitlink/links.hpp"
#include "commitlink/retrieval.hpp"
#include "commitlink/trainer.hpp"

namespace commitlink::testing {

struct Fixture {
  std::vector<IssueRecord> issues;
  std::vector<CommitRecord> commits;
  std::vector<LinkRecord> truth;
  LinkSplits splits;
  Vocab vocab;
  std::vector<IssueCodeLink> aux;
  std::vector<RankingQuery> valid_queries;

  TrainData data() const {
    TrainData d;
    d.issues = &issues;
    d.commits = &commits;
    d.train_links = splits.train;
    d.valid_queries = valid_queries;
    d.aux_links = aux;
    d.known_true = LinkSet(truth);
    return d;
  }
};

// Synthetic records as they would arrive raw, without token fields.
template <typename Record>
nlohmann::json raw_json(const Record& r) {
  nlohmann::json j = to_json(r);
  for (const char* key : {"title_tokens", "description_tokens", "message_tokens", "diff_tokens",
                          "source_tokens"}) {
    j.erase(key);
  }
  return j;
}

inline Fixture make_fixture(std::size_t n_issues, std::uint64_t seed, std::size_t candidates = 20) {
  SyntheticOptions opts;
  opts.n_issues = n_issues;
  opts.seed = seed;
  const SyntheticCorpus corpus = generate_synthetic_corpus(opts);
  Fixture f;
  for (const auto& i : corpus.issues) f.issues.push_back(issue_from_json(raw_json(i), {}));
  for (const auto& c : corpus.commits) f.commits.push_back(commit_from_json(raw_json(c), {}));
  f.truth = extract_true_links(f.issues, f.commits);
  SplitSpec spec;
  spec.seed = seed;
  f.splits = split_links(f.truth, spec);

  std::vector<Tokens> streams;
  for (const auto& i : f.issues) streams.push_back(i.text_tokens());
  for (const auto& c : f.commits) {
    streams.push_back(c.message_tokens);
    streams.push_back(c.code_tokens());
  }
  f.vocab = Vocab::build(streams, 2);

  const auto issue_index = index_by(f.issues, [](const IssueRecord& r) { return r.issue_id; });
  const auto commit_index = index_by(f.commits, [](const CommitRecord& r) { return r.commit_id; });
  const LinkSet train_pairs(f.splits.train);
  for (const auto& a : generate_issue_code_links(f.truth, issue_index, commit_index)) {
    if (train_pairs.contains(a.issue_id, a.commit_id)) f.aux.push_back(a);
  }

  std::vector<LinkRecord> backfill = f.splits.train;
  backfill.insert(backfill.end(), f.splits.test.begin(), f.splits.test.end());
  QueryOptions q;
  q.candidates = candidates;
  q.seed = seed;
  f.valid_queries = build_queries(f.splits.valid, q, backfill, LinkSet(f.truth));
  return f;
}

inline EncoderConfig tiny_student(int d = 8, std::uint64_t seed = 3) {
  EncoderConfig c;
  c.n_layers = 2;
  c.n_heads = 1;
  c.hidden_dim = d;
  c.max_positions = 96;
  c.seed = seed;
  return c;
}

}  // namespace commitlink::testing
