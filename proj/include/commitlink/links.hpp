#pragma once

// True links from commit tags, issue-code links for the auxiliary task and
// the two false-link generators (in-batch least-similar issue, time window).

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "commitlink/corpus.hpp"

namespace commitlink {

struct IssueCodeLink {
  std::string issue_id;
  std::string commit_id;
  std::size_t file_index = 0;  // into the commit's changed_files
  std::string file_path;
  int label = 0;

  bool operator==(const IssueCodeLink&) const = default;
};

enum class FalseLinkMode { similarity_in_batch, time_interval };

struct FalseLinkPolicy {
  FalseLinkMode mode = FalseLinkMode::similarity_in_batch;
  int window_days = 7;
  int per_true = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Set of (issue_id, commit_id) pairs.
class LinkSet {
 public:
  LinkSet() = default;
  explicit LinkSet(const std::vector<LinkRecord>& links);
  void insert(const std::string& issue_id, const std::string& commit_id);
  bool contains(const std::string& issue_id, const std::string& commit_id) const;
  std::size_t size() const { return keys_.size(); }

 private:
  static std::string key(const std::string& issue_id, const std::string& commit_id);
  std::unordered_set<std::string> keys_;
};

struct TrueLinkReport {
  std::size_t links = 0;
  std::size_t untagged_commits = 0;
  std::size_t unmatched_tags = 0;
};

std::vector<LinkRecord> extract_true_links(const std::vector<IssueRecord>& issues,
                                           const std::vector<CommitRecord>& commits,
                                           TrueLinkReport* report = nullptr);

// Label 1 when the file's name appears in the issue title or description,
// either as its joined lowercase form or as the contiguous token run of its
// camel/snake split (both normalized by `text`).
bool file_name_mentioned(const std::string& file_name, const IssueRecord& issue,
                         const TextPipelineConfig& text);

std::vector<IssueCodeLink> generate_issue_code_links(
    const std::vector<LinkRecord>& true_links,
    const std::unordered_map<std::string, const IssueRecord*>& issues,
    const std::unordered_map<std::string, const CommitRecord*>& commits,
    const TextPipelineConfig& text = TextPipelineConfig::defaults());

struct FalseLinkStats {
  std::size_t generated = 0;
  std::size_t fallbacks = 0;  // collision forced a less extreme candidate
  std::size_t skipped = 0;    // no conflict-free candidate at all
};

// For each distinct issue in the batch (first-scanned commit only), pairs
// that commit with the least cosine-similar other batch issue. Ties go to
// the lowest batch index; pairs already in `known_true` are skipped in
// favour of the next least similar issue.
std::vector<LinkRecord> generate_false_links_similarity(
    const std::vector<LinkRecord>& batch_true,
    const std::unordered_map<std::string, Eigen::VectorXd>& issue_embed,
    const LinkSet& known_true, FalseLinkStats* stats = nullptr);

struct TimeFalseLinkReport {
  std::size_t generated = 0;
  std::size_t skipped_issues = 0;
};

// Commits within +/- window_days of any issue date that are not linked to
// the issue.
std::vector<std::string> time_eligible_commits(const IssueRecord& issue,
                                               const std::vector<CommitRecord>& commits,
                                               const LinkSet& known_true, int window_days);

std::vector<LinkRecord> generate_false_links_time(
    const std::vector<LinkRecord>& true_links,
    const std::unordered_map<std::string, const IssueRecord*>& issues,
    const std::vector<CommitRecord>& commits, const LinkSet& known_true,
    const FalseLinkPolicy& policy, TimeFalseLinkReport* report = nullptr);

void save_issue_code_links(const std::string& path, const std::vector<IssueCodeLink>& links);
std::vector<IssueCodeLink> load_issue_code_links(const std::string& path);

template <typename Record, typename Key>
std::unordered_map<std::string, const Record*> index_by(const std::vector<Record>& records,
                                                        Key key) {
  std::unordered_map<std::string, const Record*> out;
  for (const auto& r : records) out.emplace(key(r), &r);
  return out;
}

}  // namespace commitlink
