#include "commitlink/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <stdexcept>

namespace commitlink {
namespace {

const std::regex& hyperlink_regex() {
  static const std::regex re(R"((?:https?|ftp)://[^\s<>"')\]]+|www\.[^\s<>"')\]]+)",
                             std::regex::icase | std::regex::optimize);
  return re;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

// Splits on anything that is not [A-Za-z0-9].
std::vector<std::string> word_split(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_word_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct Span {
  std::size_t begin;
  std::size_t end;  // exclusive, whole match including delimiters
  std::size_t content_begin;
  std::size_t content_end;
};

// Collects non-overlapping matches of `re` inside the gaps of `text` not
// already claimed in `taken`, so no match straddles a claimed span. Group 1
// is the block content.
void collect(const std::string& text, const std::regex& re, std::vector<Span>& taken) {
  std::vector<Span> sorted = taken;
  std::sort(sorted.begin(), sorted.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  std::vector<std::pair<std::size_t, std::size_t>> gaps;
  std::size_t cursor = 0;
  for (const auto& s : sorted) {
    if (s.begin > cursor) gaps.emplace_back(cursor, s.begin);
    cursor = std::max(cursor, s.end);
  }
  gaps.emplace_back(cursor, text.size());

  std::vector<Span> found;
  for (const auto& [gb, ge] : gaps) {
    const auto first = text.begin() + static_cast<std::ptrdiff_t>(gb);
    const auto last = text.begin() + static_cast<std::ptrdiff_t>(ge);
    // Anchors like ^ only hold at a real line start.
    const auto flags = gb == 0 || text[gb - 1] == '\n' ? std::regex_constants::match_default
                                                        : std::regex_constants::match_not_bol;
    for (auto it = std::sregex_iterator(first, last, re, flags); it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      const auto b = gb + static_cast<std::size_t>(m.position(0));
      const auto cb = gb + static_cast<std::size_t>(m.position(1));
      found.push_back({b, b + static_cast<std::size_t>(m.length(0)), cb,
                       cb + static_cast<std::size_t>(m.length(1))});
    }
  }
  taken.insert(taken.end(), found.begin(), found.end());
}

}  // namespace

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

TextPipelineConfig TextPipelineConfig::defaults() {
  TextPipelineConfig cfg;
  cfg.stopwords = default_english_stopwords();
  return cfg;
}

CodePipelineConfig CodePipelineConfig::defaults() {
  CodePipelineConfig cfg;
  cfg.keywords = default_code_keywords();
  return cfg;
}

void CodePipelineConfig::validate() const {
  if (!split_camel && !split_snake) {
    throw std::invalid_argument("code pipeline: at least one splitting rule required");
  }
  if (identifier_extractor == IdentifierExtractorKind::pluggable && !custom_extractor) {
    throw std::invalid_argument("code pipeline: pluggable extractor not set");
  }
}

IssueCode extract_issue_code(std::string_view raw) {
  static const std::regex fenced(R"(```[^\n`]*\n?([\s\S]*?)```)");
  static const std::regex jira(R"(\{(?:code|noformat)(?::[^}]*)?\}([\s\S]*?)\{(?:code|noformat)\})",
                               std::regex::icase);
  // A run of lines indented by a tab or 4+ spaces, starting the text or
  // following a blank line.
  static const std::regex indented(R"((?:^|\n\n)((?:(?:\t| {4})[^\n]*(?:\n|$))+))");
  static const std::regex inline_code(R"(`([^`\n]+)`)");

  const std::string text(raw);
  std::vector<Span> spans;
  collect(text, fenced, spans);
  collect(text, jira, spans);
  collect(text, inline_code, spans);
  {
    // The indented pattern may consume the blank-line separator; only the
    // captured lines are removed.
    std::vector<Span> found;
    collect(text, indented, found);
    for (auto& s : found) {
      Span trimmed{s.content_begin, s.content_end, s.content_begin, s.content_end};
      bool clash = false;
      for (const auto& t : spans) {
        if (trimmed.begin < t.end && t.begin < trimmed.end) clash = true;
      }
      if (!clash) spans.push_back(trimmed);
    }
  }
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.begin < b.begin; });

  IssueCode out;
  std::size_t cursor = 0;
  for (const auto& s : spans) {
    out.remaining_text.append(text, cursor, s.begin - cursor);
    out.code_blocks.push_back(text.substr(s.content_begin, s.content_end - s.content_begin));
    cursor = s.end;
  }
  out.remaining_text.append(text, cursor, std::string::npos);
  return out;
}

Tokens preprocess_text(std::string_view raw, const TextPipelineConfig& cfg) {
  std::string text = extract_issue_code(raw).remaining_text;
  if (cfg.strip_hyperlinks) {
    text = std::regex_replace(text, hyperlink_regex(), " ");
  }
  if (cfg.strip_issue_tags) {
    const std::regex tag(cfg.issue_tag_pattern, std::regex::icase);
    text = std::regex_replace(text, tag, " ");
  }
  Tokens out;
  for (auto& word : word_split(text)) {
    if (word.size() < cfg.min_token_length || cfg.stopwords.count(word)) continue;
    std::string stem = cfg.stemmer == Stemmer::porter_like ? porter_stem(word) : word;
    if (stem.size() < cfg.min_token_length || cfg.stopwords.count(stem)) continue;
    out.push_back(std::move(stem));
  }
  return out;
}

Tokens split_identifier(std::string_view identifier, bool split_camel, bool split_snake) {
  Tokens parts;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) parts.push_back(to_lower_ascii(cur));
    cur.clear();
  };
  const std::size_t n = identifier.size();
  for (std::size_t i = 0; i < n; ++i) {
    const char c = identifier[i];
    if (c == '_' || c == '$') {
      if (split_snake) {
        flush();
      }
      continue;
    }
    if (!std::isalnum(static_cast<unsigned char>(c))) {
      flush();
      continue;
    }
    if (split_camel && std::isupper(static_cast<unsigned char>(c)) && !cur.empty()) {
      const char prev = cur.back();
      const bool prev_lower = std::islower(static_cast<unsigned char>(prev)) ||
                              std::isdigit(static_cast<unsigned char>(prev));
      const bool next_lower =
          i + 1 < n && std::islower(static_cast<unsigned char>(identifier[i + 1]));
      // fooBar -> foo|Bar ; HTTPServer -> HTTP|Server
      if (prev_lower || (std::isupper(static_cast<unsigned char>(prev)) && next_lower)) {
        flush();
      }
    }
    cur.push_back(c);
  }
  flush();
  return parts;
}

std::vector<std::string> find_identifier_names(std::string_view code,
                                               const std::unordered_set<std::string>& keywords) {
  // Unified-diff headers and markers are not code.
  static const std::regex diff_header(R"(^(?:diff --git|index |--- |\+\+\+ |@@[^\n]*@@)[^\n]*)",
                                      std::regex::multiline);
  static const std::regex literals(R"("(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')");
  static const std::regex ident(R"([A-Za-z_$][A-Za-z0-9_$]*)");

  std::string text = std::regex_replace(std::string(code), diff_header, " ");
  text = std::regex_replace(text, literals, " ");
  std::vector<std::string> names;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), ident);
       it != std::sregex_iterator(); ++it) {
    std::string name = it->str();
    if (keywords.count(name) || keywords.count(to_lower_ascii(name))) continue;
    names.push_back(std::move(name));
  }
  return names;
}

Tokens extract_identifiers(std::string_view code, const CodePipelineConfig& cfg) {
  cfg.validate();
  const std::vector<std::string> names =
      cfg.identifier_extractor == IdentifierExtractorKind::pluggable
          ? cfg.custom_extractor(code)
          : find_identifier_names(code, cfg.keywords);
  Tokens out;
  for (const auto& name : names) {
    for (auto& part : split_identifier(name, cfg.split_camel, cfg.split_snake)) {
      if (part.size() < cfg.min_token_length) continue;
      out.push_back(std::move(part));
    }
  }
  return out;
}

std::unordered_set<std::string> load_word_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read word list: " + path);
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    auto e = line.find_last_not_of(" \t\r");
    words.insert(to_lower_ascii(line.substr(b, e - b + 1)));
  }
  return words;
}

const std::unordered_set<std::string>& default_english_stopwords() {
  static const std::unordered_set<std::string> words = {
      "a", "about", "above", "after", "again", "against", "all", "am", "an", "and",
      "any", "are", "aren", "as", "at", "be", "because", "been", "before", "being",
      "below", "between", "both", "but", "by", "can", "cannot", "could", "couldn",
      "did", "didn", "do", "does", "doesn", "doing", "don", "down", "during", "each",
      "few", "for", "from", "further", "had", "hadn", "has", "hasn", "have", "haven",
      "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how",
      "i", "if", "in", "into", "is", "isn", "it", "its", "itself", "just", "ll", "me",
      "might", "more", "most", "must", "mustn", "my", "myself", "no", "nor", "not",
      "now", "of", "off", "on", "once", "only", "or", "other", "ought", "our", "ours",
      "ourselves", "out", "over", "own", "re", "same", "shan", "she", "should",
      "shouldn", "so", "some", "such", "than", "that", "the", "their", "theirs",
      "them", "themselves", "then", "there", "these", "they", "this", "those",
      "through", "to", "too", "under", "until", "up", "ve", "very", "was", "wasn",
      "we", "were", "weren", "what", "when", "where", "which", "while", "who", "whom",
      "why", "will", "with", "won", "would", "wouldn", "you", "your", "yours",
      "yourself", "yourselves", "also", "may", "shall", "via", "etc", "eg", "ie",
  };
  return words;
}

const std::unordered_set<std::string>& default_code_keywords() {
  static const std::unordered_set<std::string> words = {
      // Java / C family
      "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char",
      "class", "const", "continue", "default", "do", "double", "else", "enum",
      "extends", "final", "finally", "float", "for", "goto", "if", "implements",
      "import", "instanceof", "int", "interface", "long", "native", "new", "package",
      "private", "protected", "public", "return", "short", "static", "strictfp",
      "super", "switch", "synchronized", "this", "throw", "throws", "transient", "try",
      "void", "volatile", "while", "true", "false", "null", "var", "auto", "unsigned",
      "signed", "struct", "union", "typedef", "template", "typename", "namespace",
      "using", "virtual", "override", "inline", "extern", "sizeof", "nullptr",
      "include", "define", "ifdef", "ifndef", "endif", "operator", "friend", "delete",
      // Python / JS / Scala
      "def", "lambda", "pass", "yield", "none", "self", "elif", "except", "raise",
      "with", "as", "from", "in", "is", "not", "and", "or", "let", "function",
      "typeof", "undefined", "val", "object", "trait", "match", "override", "string",
  };
  return words;
}

}  // namespace commitlink
