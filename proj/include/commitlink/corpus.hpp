#pragma once

// Issue/commit/link data model, line-delimited JSON ingest and export,
// issue-cohesive splitting and a seeded synthetic corpus generator.

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "commitlink/preprocess.hpp"

namespace commitlink {

// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChangedFile {
  std::string file_path;
  std::string file_name;  // basename without extension
  Tokens diff_tokens;
  Tokens source_tokens;
  std::string raw_diff;
  std::string raw_source;

  bool operator==(const ChangedFile&) const = default;
};

struct IssueRecord {
  std::string issue_id;
  Tokens title_tokens;
  Tokens description_tokens;
  std::optional<Timestamp> create_date;
  std::optional<Timestamp> update_date;
  std::optional<Timestamp> last_resolved_date;
  std::string raw_title;
  std::string raw_description;
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, untouched

  Tokens text_tokens() const;  // title followed by description
  bool operator==(const IssueRecord&) const = default;
};

struct CommitRecord {
  std::string commit_id;
  Tokens message_tokens;
  std::vector<ChangedFile> changed_files;
  std::optional<Timestamp> commit_time;
  // May name several issues separated by commas or whitespace.
  std::optional<std::string> tagged_issue_id;
  std::string raw_message;
  nlohmann::json extra = nlohmann::json::object();

  std::vector<std::string> tagged_issue_ids() const;
  Tokens code_tokens() const;  // diff tokens of all files, in order
  bool operator==(const CommitRecord&) const = default;
};

enum class Provenance { tagged_true, generated_false_similarity, generated_false_time };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

// A one-to-one issue-commit pair; records are referenced by id.
struct LinkRecord {
  std::string issue_id;
  std::string commit_id;
  int label = 0;
  Provenance provenance = Provenance::tagged_true;

  bool operator==(const LinkRecord&) const = default;
};

struct SplitSpec {
  double train_frac = 0.6;
  double valid_frac = 0.2;
  double test_frac = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LinkSplits {
  std::vector<LinkRecord> train;
  std::vector<LinkRecord> valid;
  std::vector<LinkRecord> test;
};

struct LoadReport {
  std::size_t lines = 0;  // non-blank input lines
  std::size_t loaded = 0;
  std::size_t malformed = 0;
  std::size_t rejected_empty = 0;
  std::size_t duplicates = 0;

  std::size_t skipped() const { return malformed + rejected_empty + duplicates; }
};

struct LoadOptions {
  // Records without token fields are run through the pipelines on load.
  bool preprocess_missing = true;
  TextPipelineConfig text = TextPipelineConfig::defaults();
  CodePipelineConfig code = CodePipelineConfig::defaults();
};

struct Project {
  std::vector<IssueRecord> issues;
  std::vector<CommitRecord> commits;
  LoadReport issue_report;
  LoadReport commit_report;
};

// ISO-8601 UTC ("2018-03-13 09:06:55+00:00", "2018-03-13T09:06:55Z", or a
// bare date). Returns nullopt on anything else.
std::optional<Timestamp> parse_timestamp(const std::string& s);
std::string format_timestamp(Timestamp t);

std::string file_name_of(const std::string& path);
bool is_source_file(const std::string& path);

nlohmann::json to_json(const IssueRecord& r);
nlohmann::json to_json(const CommitRecord& r);
nlohmann::json to_json(const LinkRecord& r);
IssueRecord issue_from_json(const nlohmann::json& j, const LoadOptions& opts);
CommitRecord commit_from_json(const nlohmann::json& j, const LoadOptions& opts);
LinkRecord link_from_json(const nlohmann::json& j);

std::vector<IssueRecord> load_issues(const std::string& path, const LoadOptions& opts,
                                     LoadReport* report = nullptr);
std::vector<CommitRecord> load_commits(const std::string& path, const LoadOptions& opts,
                                       LoadReport* report = nullptr);
std::vector<LinkRecord> load_links(const std::string& path);

// Reads <dir>/issues.jsonl and <dir>/commits.jsonl.
Project load_project(const std::string& dir, const LoadOptions& opts = {});

void save_issues(const std::string& path, const std::vector<IssueRecord>& issues);
void save_commits(const std::string& path, const std::vector<CommitRecord>& commits);
void save_links(const std::string& path, const std::vector<LinkRecord>& links);
void save_project(const std::string& dir, const Project& project);

// Issue-cohesive split: every link of one issue lands in the same part.
// valid/test targets are max(1, floor(n * frac)); remaining rows go to train.
LinkSplits split_links(const std::vector<LinkRecord>& links, const SplitSpec& spec);

struct SyntheticCorpus {
  std::vector<IssueRecord> issues;   // raw text only, not preprocessed
  std::vector<CommitRecord> commits;
  std::vector<LinkRecord> true_links;
  // Per generated commit: true when it carries planted issue tokens.
  std::vector<std::pair<std::string, bool>> planted;
};

struct SyntheticOptions {
  std::size_t n_issues = 200;
  std::uint64_t seed = 0;
  double overlap = 0.9;
  // Fraction of commits additionally tagged with a second issue.
  double multi_tag_rate = 0.03;
  // Untagged background commits per issue.
  double background_rate = 0.5;
  // Entity vocabulary size as a fraction of n_issues; smaller pools make
  // entities recur across issues.
  double entity_pool = 0.25;
  // Chance that planted code names an entity by its code-side alias.
  double alias_rate = 0.8;
  // Chance that a commit message carries one of its topic's prose words.
  double message_topic_rate = 0.0;
};

// Each issue gets 1-3 tagged commits. With probability `overlap` a commit's
// message and code reuse the issue's planted entity words.
SyntheticCorpus generate_synthetic_corpus(const SyntheticOptions& opts);

// Planted entity words of each synthetic issue, by issue id.
std::vector<std::string> synthetic_planted_words(const IssueRecord& issue);

}  // namespace commitlink
