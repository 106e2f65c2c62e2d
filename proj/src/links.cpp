#include "commitlink/links.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

namespace commitlink {
namespace {

double cosine_of(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

bool contains_run(const Tokens& haystack, const Tokens& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

}  // namespace

void FalseLinkPolicy::validate() const {
  if (window_days <= 0) throw std::invalid_argument("window_days must be positive");
  if (per_true < 1) throw std::invalid_argument("per_true must be at least 1");
}

LinkSet::LinkSet(const std::vector<LinkRecord>& links) {
  for (const auto& l : links) insert(l.issue_id, l.commit_id);
}

std::string LinkSet::key(const std::string& issue_id, const std::string& commit_id) {
  std::string k;
  k.reserve(issue_id.size() + commit_id.size() + 1);
  k.append(issue_id).push_back('\x1f');
  k.append(commit_id);
  return k;
}

void LinkSet::insert(const std::string& issue_id, const std::string& commit_id) {
  keys_.insert(key(issue_id, commit_id));
}

bool LinkSet::contains(const std::string& issue_id, const std::string& commit_id) const {
  return keys_.count(key(issue_id, commit_id)) > 0;
}

std::vector<LinkRecord> extract_true_links(const std::vector<IssueRecord>& issues,
                                           const std::vector<CommitRecord>& commits,
                                           TrueLinkReport* report) {
  std::unordered_set<std::string> known;
  for (const auto& i : issues) known.insert(i.issue_id);
  TrueLinkReport rep;
  std::vector<LinkRecord> links;
  LinkSet seen;
  for (const auto& c : commits) {
    const auto ids = c.tagged_issue_ids();
    if (ids.empty()) {
      ++rep.untagged_commits;
      continue;
    }
    for (const auto& id : ids) {
      if (!known.count(id)) {
        ++rep.unmatched_tags;
        continue;
      }
      if (seen.contains(id, c.commit_id)) continue;
      seen.insert(id, c.commit_id);
      links.push_back({id, c.commit_id, 1, Provenance::tagged_true});
    }
  }
  rep.links = links.size();
  if (report) *report = rep;
  return links;
}

bool file_name_mentioned(const std::string& file_name, const IssueRecord& issue,
                         const TextPipelineConfig& text) {
  const Tokens joined = preprocess_text(to_lower_ascii(file_name), text);
  Tokens split_words;
  {
    std::string spaced;
    for (const auto& part : split_identifier(file_name, true, true)) {
      spaced.append(part).push_back(' ');
    }
    split_words = preprocess_text(spaced, text);
  }
  for (const Tokens* field : {&issue.title_tokens, &issue.description_tokens}) {
    if (joined.size() == 1 &&
        std::find(field->begin(), field->end(), joined.front()) != field->end()) {
      return true;
    }
    if (contains_run(*field, split_words)) return true;
  }
  return false;
}

std::vector<IssueCodeLink> generate_issue_code_links(
    const std::vector<LinkRecord>& true_links,
    const std::unordered_map<std::string, const IssueRecord*>& issues,
    const std::unordered_map<std::string, const CommitRecord*>& commits,
    const TextPipelineConfig& text) {
  std::vector<IssueCodeLink> out;
  for (const auto& link : true_links) {
    if (link.label != 1) continue;
    const auto ii = issues.find(link.issue_id);
    const auto ci = commits.find(link.commit_id);
    if (ii == issues.end() || ci == commits.end()) continue;
    const auto& files = ci->second->changed_files;
    for (std::size_t f = 0; f < files.size(); ++f) {
      if (!is_source_file(files[f].file_path)) continue;
      const int label = file_name_mentioned(files[f].file_name, *ii->second, text) ? 1 : 0;
      out.push_back({link.issue_id, link.commit_id, f, files[f].file_path, label});
    }
  }
  return out;
}

std::vector<LinkRecord> generate_false_links_similarity(
    const std::vector<LinkRecord>& batch_true,
    const std::unordered_map<std::string, Eigen::VectorXd>& issue_embed,
    const LinkSet& known_true, FalseLinkStats* stats) {
  std::vector<std::string> issue_order;
  std::vector<std::string> first_commit;
  {
    std::unordered_set<std::string> seen;
    for (const auto& l : batch_true) {
      if (seen.insert(l.issue_id).second) {
        issue_order.push_back(l.issue_id);
        first_commit.push_back(l.commit_id);
      }
    }
  }
  if (issue_order.size() < 2) {
    throw DataError("false-link generation needs at least two distinct issues in a batch");
  }
  std::vector<const Eigen::VectorXd*> embeds;
  for (const auto& id : issue_order) {
    const auto it = issue_embed.find(id);
    if (it == issue_embed.end()) throw DataError("missing embedding for issue " + id);
    embeds.push_back(&it->second);
  }

  FalseLinkStats st;
  std::vector<LinkRecord> out;
  const std::size_t n = issue_order.size();
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < n; ++i) {
    ranked.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) ranked.emplace_back(cosine_of(*embeds[i], *embeds[j]), j);
    }
    std::sort(ranked.begin(), ranked.end());  // ascending cosine, then index
    bool placed = false;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const std::string& candidate = issue_order[ranked[r].second];
      if (known_true.contains(candidate, first_commit[i])) continue;
      out.push_back({candidate, first_commit[i], 0, Provenance::generated_false_similarity});
      if (r > 0) ++st.fallbacks;
      placed = true;
      break;
    }
    if (!placed) ++st.skipped;
  }
  st.generated = out.size();
  if (stats) *stats = st;
  return out;
}

std::vector<std::string> time_eligible_commits(const IssueRecord& issue,
                                               const std::vector<CommitRecord>& commits,
                                               const LinkSet& known_true, int window_days) {
  const Timestamp window = static_cast<Timestamp>(window_days) * 86400;
  std::vector<Timestamp> dates;
  for (const auto& d : {issue.create_date, issue.update_date, issue.last_resolved_date}) {
    if (d) dates.push_back(*d);
  }
  std::vector<std::string> out;
  for (const auto& c : commits) {
    if (!c.commit_time || known_true.contains(issue.issue_id, c.commit_id)) continue;
    for (auto d : dates) {
      const Timestamp delta = *c.commit_time - d;
      if (delta >= -window && delta <= window) {
        out.push_back(c.commit_id);
        break;
      }
    }
  }
  return out;
}

std::vector<LinkRecord> generate_false_links_time(
    const std::vector<LinkRecord>& true_links,
    const std::unordered_map<std::string, const IssueRecord*>& issues,
    const std::vector<CommitRecord>& commits, const LinkSet& known_true,
    const FalseLinkPolicy& policy, TimeFalseLinkReport* report) {
  policy.validate();
  std::mt19937_64 rng(policy.seed);
  TimeFalseLinkReport rep;
  std::vector<LinkRecord> out;
  std::unordered_set<std::string> done;
  for (const auto& link : true_links) {
    if (!done.insert(link.issue_id).second) continue;
    const auto it = issues.find(link.issue_id);
    if (it == issues.end()) {
      ++rep.skipped_issues;
      continue;
    }
    auto eligible = time_eligible_commits(*it->second, commits, known_true, policy.window_days);
    if (eligible.empty()) {
      ++rep.skipped_issues;
      continue;
    }
    const std::size_t take = std::min<std::size_t>(eligible.size(), policy.per_true);
    for (std::size_t k = 0; k < take; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, eligible.size() - 1);
      std::swap(eligible[k], eligible[pick(rng)]);
      out.push_back({link.issue_id, eligible[k], 0, Provenance::generated_false_time});
    }
  }
  rep.generated = out.size();
  if (report) *report = rep;
  return out;
}

void save_issue_code_links(const std::string& path, const std::vector<IssueCodeLink>& links) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& l : links) {
    nlohmann::json j{{"issue_id", l.issue_id},
                     {"commitid", l.commit_id},
                     {"file_index", l.file_index},
                     {"file_path", l.file_path},
                     {"label", l.label}};
    out << j.dump() << '\n';
  }
}

std::vector<IssueCodeLink> load_issue_code_links(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<IssueCodeLink> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("issue_id").get<std::string>(), j.at("commitid").get<std::string>(),
                   j.at("file_index").get<std::size_t>(), j.at("file_path").get<std::string>(),
                   j.at("label").get<int>()});
  }
  return out;
}

}  // namespace commitlink
