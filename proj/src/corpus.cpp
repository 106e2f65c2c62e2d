#include "commitlink/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace commitlink {
namespace {

using nlohmann::json;

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

Tokens tokens_from_json(const json& j) {
  if (!j.is_array()) throw DataError("token field is not an array");
  Tokens out;
  for (const auto& t : j) out.push_back(t.get<std::string>());
  return out;
}

std::optional<Timestamp> optional_time(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_string()) throw DataError(std::string("bad timestamp field ") + key);
  auto t = parse_timestamp(j.at(key).get<std::string>());
  if (!t) throw DataError(std::string("unparseable timestamp in ") + key);
  return t;
}

std::string optional_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  return j.at(key).get<std::string>();
}

json time_json(const std::optional<Timestamp>& t) {
  return t ? json(format_timestamp(*t)) : json(nullptr);
}

const std::set<std::string>& issue_fields() {
  static const std::set<std::string> f = {"issue_id", "summary", "description",
                                          "create_date", "update_date",
                                          "last_resolved_date", "title_tokens",
                                          "description_tokens"};
  return f;
}

const std::set<std::string>& commit_fields() {
  static const std::set<std::string> f = {"commitid", "message", "commit_issue_id",
                                          "commit_time_date", "changed_files", "Diff",
                                          "codelist", "message_tokens", "diff_tokens",
                                          "source_tokens"};
  return f;
}

json extras_of(const json& j, const std::set<std::string>& known) {
  json extra = json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) extra[it.key()] = it.value();
  }
  return extra;
}

template <typename Record, typename Parse, typename IdOf>
std::vector<Record> load_lines(const std::string& path, Parse parse, IdOf id_of,
                               LoadReport* report_out) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  LoadReport report;
  std::vector<Record> records;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++report.lines;
    Record rec;
    try {
      rec = parse(json::parse(line));
    } catch (const DataError& e) {
      if (std::string_view(e.what()).starts_with("empty text")) {
        ++report.rejected_empty;
      } else {
        ++report.malformed;
      }
      continue;
    } catch (const std::exception&) {
      ++report.malformed;
      continue;
    }
    if (!seen.insert(id_of(rec)).second) {
      ++report.duplicates;
      continue;
    }
    records.push_back(std::move(rec));
    ++report.loaded;
  }
  if (report.lines == 0) throw DataError("no records in " + path);
  if (2 * report.malformed > report.lines) {
    throw DataError("more than half of the lines in " + path +
                    " are malformed; wrong schema?");
  }
  if (report_out) *report_out = report;
  return records;
}

void write_lines(const std::string& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& r : rows) out << r.dump() << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// Records

Tokens IssueRecord::text_tokens() const {
  Tokens t = title_tokens;
  t.insert(t.end(), description_tokens.begin(), description_tokens.end());
  return t;
}

std::vector<std::string> CommitRecord::tagged_issue_ids() const {
  std::vector<std::string> ids;
  if (!tagged_issue_id) return ids;
  std::string cur;
  for (char c : *tagged_issue_id) {
    if (c == ',' || c == ';' || std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) ids.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) ids.push_back(std::move(cur));
  return ids;
}

Tokens CommitRecord::code_tokens() const {
  Tokens t;
  for (const auto& f : changed_files) t.insert(t.end(), f.diff_tokens.begin(), f.diff_tokens.end());
  return t;
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::tagged_true: return "tagged_true";
    case Provenance::generated_false_similarity: return "generated_false_similarity";
    case Provenance::generated_false_time: return "generated_false_time";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "tagged_true") return Provenance::tagged_true;
  if (s == "generated_false_similarity") return Provenance::generated_false_similarity;
  if (s == "generated_false_time") return Provenance::generated_false_time;
  throw DataError("unknown provenance: " + s);
}

std::optional<Timestamp> parse_timestamp(const std::string& s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  std::size_t pos = 0;
  auto digits = [&](int n, int& out) {
    if (pos + static_cast<std::size_t>(n) > s.size()) return false;
    out = 0;
    for (int i = 0; i < n; ++i) {
      const char c = s[pos++];
      if (!std::isdigit(static_cast<unsigned char>(c))) return false;
      out = out * 10 + (c - '0');
    }
    return true;
  };
  auto expect = [&](char c) {
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  };
  if (!digits(4, y) || !expect('-') || !digits(2, mo) || !expect('-') || !digits(2, d)) {
    return std::nullopt;
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
  int offset_seconds = 0;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != ' ') return std::nullopt;
    ++pos;
    if (!digits(2, h) || !expect(':') || !digits(2, mi)) return std::nullopt;
    if (expect(':') && !digits(2, sec)) return std::nullopt;
    if (expect('.')) {
      while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    if (pos < s.size()) {
      const char c = s[pos];
      if (c == 'Z') {
        ++pos;
      } else if (c == '+' || c == '-') {
        ++pos;
        int oh = 0, om = 0;
        if (!digits(2, oh)) return std::nullopt;
        expect(':');
        if (!digits(2, om)) return std::nullopt;
        offset_seconds = (c == '+' ? 1 : -1) * (oh * 3600 + om * 60);
      } else {
        return std::nullopt;
      }
    }
    if (pos != s.size() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  }
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 +
         h * 3600 + mi * 60 + sec - offset_seconds;
}

std::string format_timestamp(Timestamp t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  std::int64_t y = 0;
  unsigned m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ",
                static_cast<long long>(y), m, d, static_cast<long long>(rem / 3600),
                static_cast<long long>(rem / 60 % 60), static_cast<long long>(rem % 60));
  return buf;
}

std::string file_name_of(const std::string& path) {
  std::string base = path;
  const auto slash = base.find_last_of("/\\");
  if (slash != std::string::npos) base = base.substr(slash + 1);
  const auto dot = base.find('.');
  if (dot != std::string::npos && dot > 0) base = base.substr(0, dot);
  return base;
}

bool is_source_file(const std::string& path) {
  static const std::unordered_set<std::string> exts = {
      "java", "c",  "cc",    "cpp", "cxx",  "h",     "hh",  "hpp", "hxx",
      "py",   "js", "ts",    "go",  "rs",   "scala", "kt",  "cs",  "rb",
      "php",  "m",  "swift", "groovy", "jsx", "tsx",  "clj", "sql", "sh"};
  const auto dot = path.find_last_of('.');
  const auto slash = path.find_last_of("/\\");
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return false;
  return exts.count(to_lower_ascii(path.substr(dot + 1))) > 0;
}

json to_json(const IssueRecord& r) {
  json j = r.extra;
  j["issue_id"] = r.issue_id;
  j["summary"] = r.raw_title;
  j["description"] = r.raw_description;
  j["create_date"] = time_json(r.create_date);
  j["update_date"] = time_json(r.update_date);
  j["last_resolved_date"] = time_json(r.last_resolved_date);
  j["title_tokens"] = r.title_tokens;
  j["description_tokens"] = r.description_tokens;
  return j;
}

json to_json(const CommitRecord& r) {
  json j = r.extra;
  j["commitid"] = r.commit_id;
  j["message"] = r.raw_message;
  j["commit_issue_id"] = r.tagged_issue_id ? json(*r.tagged_issue_id) : json(nullptr);
  j["commit_time_date"] = time_json(r.commit_time);
  json paths = json::array(), diffs = json::array(), sources = json::array();
  json diff_tokens = json::array(), source_tokens = json::array();
  for (const auto& f : r.changed_files) {
    paths.push_back(f.file_path);
    diffs.push_back(f.raw_diff);
    sources.push_back(f.raw_source);
    diff_tokens.push_back(f.diff_tokens);
    source_tokens.push_back(f.source_tokens);
  }
  j["changed_files"] = paths;
  j["Diff"] = diffs;
  j["codelist"] = sources;
  j["message_tokens"] = r.message_tokens;
  j["diff_tokens"] = diff_tokens;
  j["source_tokens"] = source_tokens;
  return j;
}

json to_json(const LinkRecord& r) {
  return json{{"issue_id", r.issue_id},
              {"commitid", r.commit_id},
              {"label", r.label},
              {"provenance", to_string(r.provenance)}};
}

IssueRecord issue_from_json(const json& j, const LoadOptions& opts) {
  if (!j.is_object()) throw DataError("record is not an object");
  IssueRecord r;
  if (!j.contains("issue_id")) throw DataError("missing issue_id");
  const auto& id = j.at("issue_id");
  r.issue_id = id.is_number() ? id.dump() : id.get<std::string>();
  if (r.issue_id.empty()) throw DataError("empty issue_id");
  r.raw_title = optional_string(j, "summary");
  r.raw_description = optional_string(j, "description");
  r.create_date = optional_time(j, "create_date");
  r.update_date = optional_time(j, "update_date");
  r.last_resolved_date = optional_time(j, "last_resolved_date");
  if (r.create_date && r.update_date && *r.create_date > *r.update_date) {
    throw DataError("create_date after update_date");
  }
  if (j.contains("title_tokens")) {
    r.title_tokens = tokens_from_json(j.at("title_tokens"));
    if (j.contains("description_tokens")) {
      r.description_tokens = tokens_from_json(j.at("description_tokens"));
    }
  } else if (opts.preprocess_missing) {
    r.title_tokens = preprocess_text(r.raw_title, opts.text);
    r.description_tokens = preprocess_text(r.raw_description, opts.text);
  }
  if (r.title_tokens.empty() && r.description_tokens.empty()) {
    throw DataError("empty text after preprocessing");
  }
  r.extra = extras_of(j, issue_fields());
  return r;
}

CommitRecord commit_from_json(const json& j, const LoadOptions& opts) {
  if (!j.is_object()) throw DataError("record is not an object");
  CommitRecord r;
  if (!j.contains("commitid")) throw DataError("missing commitid");
  r.commit_id = j.at("commitid").get<std::string>();
  if (r.commit_id.empty()) throw DataError("empty commitid");
  r.raw_message = optional_string(j, "message");
  if (j.contains("commit_issue_id") && !j.at("commit_issue_id").is_null()) {
    const auto& tag = j.at("commit_issue_id");
    r.tagged_issue_id = tag.is_number() ? tag.dump() : tag.get<std::string>();
  }
  r.commit_time = optional_time(j, "commit_time_date");

  std::vector<std::string> paths;
  if (j.contains("changed_files") && !j.at("changed_files").is_null()) {
    paths = j.at("changed_files").get<std::vector<std::string>>();
  }
  auto parallel = [&](const char* key) -> std::vector<json> {
    if (!j.contains(key) || j.at(key).is_null()) return {};
    const auto& arr = j.at(key);
    if (!arr.is_array() || arr.size() != paths.size()) {
      throw DataError(std::string(key) + " does not parallel changed_files");
    }
    return arr.get<std::vector<json>>();
  };
  const auto diffs = parallel("Diff");
  const auto sources = parallel("codelist");
  const auto diff_tokens = parallel("diff_tokens");
  const auto source_tokens = parallel("source_tokens");
  const bool have_tokens = j.contains("message_tokens");

  for (std::size_t i = 0; i < paths.size(); ++i) {
    ChangedFile f;
    f.file_path = paths[i];
    f.file_name = file_name_of(paths[i]);
    if (!diffs.empty() && !diffs[i].is_null()) f.raw_diff = diffs[i].get<std::string>();
    if (!sources.empty() && !sources[i].is_null()) f.raw_source = sources[i].get<std::string>();
    if (!diff_tokens.empty()) f.diff_tokens = tokens_from_json(diff_tokens[i]);
    if (!source_tokens.empty()) f.source_tokens = tokens_from_json(source_tokens[i]);
    if (!have_tokens && opts.preprocess_missing) {
      f.diff_tokens = extract_identifiers(f.raw_diff, opts.code);
      f.source_tokens = extract_identifiers(f.raw_source, opts.code);
    }
    r.changed_files.push_back(std::move(f));
  }
  if (have_tokens) {
    r.message_tokens = tokens_from_json(j.at("message_tokens"));
  } else if (opts.preprocess_missing) {
    r.message_tokens = preprocess_text(r.raw_message, opts.text);
  }
  r.extra = extras_of(j, commit_fields());
  return r;
}

LinkRecord link_from_json(const json& j) {
  LinkRecord r;
  r.issue_id = j.at("issue_id").is_number() ? j.at("issue_id").dump()
                                            : j.at("issue_id").get<std::string>();
  r.commit_id = j.at("commitid").get<std::string>();
  r.label = j.at("label").get<int>();
  r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  if ((r.label == 1) != (r.provenance == Provenance::tagged_true)) {
    throw DataError("label and provenance disagree");
  }
  return r;
}

std::vector<IssueRecord> load_issues(const std::string& path, const LoadOptions& opts,
                                     LoadReport* report) {
  return load_lines<IssueRecord>(
      path, [&](const json& j) { return issue_from_json(j, opts); },
      [](const IssueRecord& r) { return r.issue_id; }, report);
}

std::vector<CommitRecord> load_commits(const std::string& path, const LoadOptions& opts,
                                       LoadReport* report) {
  return load_lines<CommitRecord>(
      path, [&](const json& j) { return commit_from_json(j, opts); },
      [](const CommitRecord& r) { return r.commit_id; }, report);
}

std::vector<LinkRecord> load_links(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<LinkRecord> links;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      links.push_back(link_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return links;
}

Project load_project(const std::string& dir, const LoadOptions& opts) {
  Project p;
  const std::filesystem::path root(dir);
  p.issues = load_issues((root / "issues.jsonl").string(), opts, &p.issue_report);
  p.commits = load_commits((root / "commits.jsonl").string(), opts, &p.commit_report);
  return p;
}

void save_issues(const std::string& path, const std::vector<IssueRecord>& issues) {
  std::vector<json> rows;
  rows.reserve(issues.size());
  for (const auto& r : issues) rows.push_back(to_json(r));
  write_lines(path, rows);
}

void save_commits(const std::string& path, const std::vector<CommitRecord>& commits) {
  std::vector<json> rows;
  rows.reserve(commits.size());
  for (const auto& r : commits) rows.push_back(to_json(r));
  write_lines(path, rows);
}

void save_links(const std::string& path, const std::vector<LinkRecord>& links) {
  std::vector<json> rows;
  rows.reserve(links.size());
  for (const auto& r : links) rows.push_back(to_json(r));
  write_lines(path, rows);
}

void save_project(const std::string& dir, const Project& project) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  save_issues((root / "issues.jsonl").string(), project.issues);
  save_commits((root / "commits.jsonl").string(), project.commits);
}

// ---------------------------------------------------------------------------
// Splitting

void SplitSpec::validate() const {
  if (train_frac < 0 || valid_frac < 0 || test_frac < 0) {
    throw std::invalid_argument("split fractions must be non-negative");
  }
  if (std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
}

LinkSplits split_links(const std::vector<LinkRecord>& links, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = links.size();
  if (n < 3) throw DataError("need at least 3 links to form three splits");

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = groups.try_emplace(links[i].issue_id);
    if (inserted) order.push_back(links[i].issue_id);
    it->second.push_back(i);
  }
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto target = [n](double frac) -> std::size_t {
    if (frac <= 0.0) return 0;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * frac + 1e-9)));
  };
  const std::size_t valid_target = target(spec.valid_frac);
  const std::size_t test_target = target(spec.test_frac);

  LinkSplits out;
  for (const auto& issue : order) {
    const auto& idx = groups.at(issue);
    std::vector<LinkRecord>* dest = &out.train;
    if (out.valid.size() + idx.size() <= valid_target) {
      dest = &out.valid;
    } else if (out.test.size() + idx.size() <= test_target) {
      dest = &out.test;
    }
    for (auto i : idx) dest->push_back(links[i]);
  }
  if ((valid_target > 0 && out.valid.empty()) || (test_target > 0 && out.test.empty()) ||
      out.train.empty()) {
    throw DataError("issue-cohesive split left a partition empty");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

class WordFactory {
 public:
  explicit WordFactory(std::mt19937_64& rng) : rng_(rng) {}

  // Three-syllable pseudo-words ending in a vowel the stemmer leaves alone.
  std::string fresh() {
    static constexpr std::string_view kCons = "bdfgklmnprstvz";
    static constexpr std::string_view kVow = "aiou";
    while (true) {
      std::string w;
      for (int s = 0; s < 3; ++s) {
        w.push_back(kCons[pick(kCons.size())]);
        w.push_back(kVow[pick(kVow.size())]);
      }
      if (used_.insert(w).second) return w;
    }
  }

  std::size_t pick(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
  }

 private:
  std::mt19937_64& rng_;
  std::unordered_set<std::string> used_;
};

std::string capitalize(std::string w) {
  if (!w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::string hex_id(std::mt19937_64& rng) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  for (int i = 0; i < 40; ++i) s.push_back(kHex[rng() & 15]);
  return s;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> w = {
      "when", "the", "user", "tries", "value", "returns", "wrong", "result", "after",
      "update", "should", "be", "able", "support", "error", "case", "change",
      "behavior", "currently", "it", "is", "not", "possible", "we", "need", "handle",
      "properly", "this", "causes", "failure", "on", "large", "input", "some",
      "cases", "expected", "output", "instead", "of", "improve", "documentation",
      "test", "missing", "add", "option", "default", "version", "release"};
  return w;
}

const std::vector<std::string>& code_nouns() {
  static const std::vector<std::string> w = {"Manager", "Handler", "Util", "Config",
                                             "Service", "Factory", "Buffer", "Cache",
                                             "Request", "Response", "Builder", "Context"};
  return w;
}

const std::vector<std::string>& code_verbs() {
  static const std::vector<std::string> w = {"get", "set", "create", "update", "remove",
                                             "find", "load", "parse", "init", "reset"};
  return w;
}

const std::vector<std::string>& commit_verbs() {
  static const std::vector<std::string> w = {"Fix", "Add", "Improve", "Refactor",
                                             "Support", "Handle", "Update", "Clean"};
  return w;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticOptions& opts) {
  if (opts.n_issues < 10) throw std::invalid_argument("synthetic corpus needs >= 10 issues");
  if (opts.overlap < 0.0 || opts.overlap > 1.0) {
    throw std::invalid_argument("overlap must lie in [0, 1]");
  }
  std::mt19937_64 rng(opts.seed);
  WordFactory words(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto chance = [&](double p) { return unit(rng) < p; };
  auto pick_of = [&](const std::vector<std::string>& v) -> const std::string& {
    return v[words.pick(v.size())];
  };

  // Topics carry disjoint prose and code vocabularies; entities are the
  // planted words, each with a code-side alias.
  const std::size_t n_topics = std::max<std::size_t>(4, opts.n_issues / 8);
  struct Topic {
    std::vector<std::string> prose;
    std::vector<std::string> code;
  };
  std::vector<Topic> topics(n_topics);
  for (auto& t : topics) {
    for (int i = 0; i < 5; ++i) t.prose.push_back(words.fresh());
    for (int i = 0; i < 4; ++i) t.code.push_back(words.fresh());
  }
  const auto n_entities = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::llround(opts.entity_pool * static_cast<double>(opts.n_issues))));
  std::vector<std::string> entity(n_entities), alias(n_entities);
  for (std::size_t i = 0; i < n_entities; ++i) {
    entity[i] = words.fresh();
    alias[i] = words.fresh();
  }

  SyntheticCorpus corpus;
  const Timestamp base = days_from_civil(2018, 1, 1) * 86400;
  constexpr Timestamp kDay = 86400;

  struct IssueMeta {
    std::size_t topic;
    std::vector<std::size_t> entities;
    std::string hint_class;  // class touched by planted commits
  };
  std::vector<IssueMeta> meta;

  for (std::size_t i = 0; i < opts.n_issues; ++i) {
    IssueMeta m{words.pick(n_topics), {words.pick(n_entities), words.pick(n_entities)}, {}};
    m.hint_class = capitalize(entity[m.entities[0]]) + pick_of(code_nouns());
    const Topic& topic = topics[m.topic];
    IssueRecord issue;
    issue.issue_id = "PROJ-" + std::to_string(i + 1);
    const std::string ent0 = capitalize(entity[m.entities[0]]);
    issue.raw_title = pick_of(commit_verbs()) + " " + ent0 + " " + pick_of(topic.prose) +
                      " when " + pick_of(topic.prose) + " is " + pick_of(filler_words());
    std::ostringstream desc;
    const int sentences = 2 + static_cast<int>(words.pick(3));
    for (int s = 0; s < sentences; ++s) {
      desc << capitalize(pick_of(filler_words()));
      for (int k = 0; k < 6; ++k) {
        const double r = unit(rng);
        if (r < 0.35) {
          desc << ' ' << pick_of(topic.prose);
        } else if (r < 0.5) {
          desc << ' ' << entity[m.entities[words.pick(2)]];
        } else {
          desc << ' ' << pick_of(filler_words());
        }
      }
      desc << ". ";
    }
    if (chance(0.5)) desc << "The failure shows up in " << m.hint_class << ". ";
    if (chance(0.2)) desc << "See https://issues.example.org/browse/" << issue.issue_id << " for context. ";
    if (chance(0.2)) {
      desc << "\n{code}\n" << ent0 << code_nouns()[0] << ".get" << capitalize(pick_of(topic.code))
           << "();\n{code}\n";
    }
    issue.raw_description = desc.str();
    const Timestamp created = base + static_cast<Timestamp>(i) * 2 * kDay +
                              static_cast<Timestamp>(words.pick(kDay));
    issue.create_date = created;
    issue.update_date = created + static_cast<Timestamp>(1 + words.pick(30)) * kDay;
    issue.last_resolved_date = created + static_cast<Timestamp>(1 + words.pick(40)) * kDay;
    issue.extra["component"] = "component-" + std::to_string(m.topic);
    issue.extra["synthetic_entities"] = {entity[m.entities[0]], entity[m.entities[1]]};
    corpus.issues.push_back(std::move(issue));
    meta.push_back(std::move(m));
  }

  auto make_commit = [&](std::size_t issue_idx, bool planted, std::optional<std::string> tag,
                         std::optional<std::size_t> co_issue) -> CommitRecord {
    const IssueMeta& m = meta[issue_idx];
    const Topic& topic = topics[m.topic];
    const IssueRecord& issue = corpus.issues[issue_idx];
    CommitRecord c;
    c.commit_id = hex_id(rng);
    std::ostringstream msg;
    if (tag) msg << '[' << issue.issue_id << "] ";
    msg << pick_of(commit_verbs());
    if (planted) msg << ' ' << capitalize(entity[m.entities[0]]);
    if (chance(opts.message_topic_rate)) msg << ' ' << pick_of(topic.prose);
    msg << ' ' << pick_of(filler_words());
    if (planted && chance(0.5)) msg << ' ' << entity[m.entities[1]];
    if (planted && co_issue) msg << " and " << entity[meta[*co_issue].entities[0]];
    msg << ' ' << pick_of(filler_words());
    c.raw_message = msg.str();
    c.tagged_issue_id = tag;
    c.commit_time = *issue.create_date + static_cast<Timestamp>(words.pick(10 * kDay));

    const std::size_t n_files = 1 + words.pick(3);
    for (std::size_t f = 0; f < n_files; ++f) {
      ChangedFile file;
      // Planted code uses the entity itself or its alias.
      std::string ent_code;
      if (planted) {
        const std::size_t e = m.entities[words.pick(2)];
        ent_code = capitalize(chance(opts.alias_rate) ? alias[e] : entity[e]);
      }
      const std::string cls = planted && f == 0
                                  ? m.hint_class
                                  : capitalize(pick_of(topic.code)) + pick_of(code_nouns());
      file.file_path = "src/main/java/org/example/" + cls + ".java";
      file.file_name = cls;
      std::ostringstream diff;
      diff << "@@ -10,6 +10,8 @@ public class " << cls << " {\n";
      const int lines = 2 + static_cast<int>(words.pick(4));
      for (int l = 0; l < lines; ++l) {
        const std::string name =
            pick_of(code_verbs()) + (planted && chance(0.5) ? ent_code : capitalize(pick_of(topic.code)));
        const std::string field = pick_of(topic.code) + pick_of(code_nouns());
        switch (words.pick(3)) {
          case 0:
            diff << "+    public void " << name << "(" << capitalize(pick_of(topic.code)) << " value) {\n";
            break;
          case 1:
            diff << "-    " << field << " = " << name << "();\n";
            break;
          default:
            diff << "+    this." << field << "." << name << "(\"" << pick_of(filler_words()) << "\");\n";
            break;
        }
      }
      diff << "     }\n";
      file.raw_diff = diff.str();
      c.changed_files.push_back(std::move(file));
    }
    return c;
  };

  std::unordered_set<std::string> linked;
  for (std::size_t i = 0; i < opts.n_issues; ++i) {
    const std::size_t n_commits = 1 + words.pick(3);
    for (std::size_t k = 0; k < n_commits; ++k) {
      const bool planted = chance(opts.overlap);
      std::string tag = corpus.issues[i].issue_id;
      std::optional<std::size_t> second;
      if (chance(opts.multi_tag_rate)) {
        const std::size_t other = words.pick(opts.n_issues);
        if (other != i) {
          second = other;
          tag += "," + corpus.issues[other].issue_id;
        }
      }
      CommitRecord c = make_commit(i, planted, tag, second);
      corpus.true_links.push_back({corpus.issues[i].issue_id, c.commit_id, 1, Provenance::tagged_true});
      if (second) {
        corpus.true_links.push_back(
            {corpus.issues[*second].issue_id, c.commit_id, 1, Provenance::tagged_true});
      }
      corpus.planted.emplace_back(c.commit_id, planted);
      corpus.commits.push_back(std::move(c));
    }
  }
  const auto n_background =
      static_cast<std::size_t>(std::llround(opts.background_rate * static_cast<double>(opts.n_issues)));
  for (std::size_t b = 0; b < n_background; ++b) {
    CommitRecord c = make_commit(words.pick(opts.n_issues), false, std::nullopt, std::nullopt);
    corpus.planted.emplace_back(c.commit_id, false);
    corpus.commits.push_back(std::move(c));
  }
  return corpus;
}

std::vector<std::string> synthetic_planted_words(const IssueRecord& issue) {
  if (!issue.extra.contains("synthetic_entities")) return {};
  return issue.extra.at("synthetic_entities").get<std::vector<std::string>>();
}

}  // namespace commitlink
