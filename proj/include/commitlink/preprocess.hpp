#pragma once

// Text and code preprocessing: raw issue/commit strings to lowercase token
// lists.

#include <functional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace commitlink {

using Tokens = std::vector<std::string>;

enum class Stemmer { porter_like, none };

struct TextPipelineConfig {
  std::unordered_set<std::string> stopwords;
  Stemmer stemmer = Stemmer::porter_like;
  bool strip_hyperlinks = true;
  bool strip_issue_tags = true;
  // Matched case-insensitively, e.g. "[CALCITE-2299]".
  std::string issue_tag_pattern = R"(\[[A-Za-z][A-Za-z0-9_]*-[0-9]+\])";
  // Tokens shorter than this are dropped.
  std::size_t min_token_length = 2;

  static TextPipelineConfig defaults();
};

enum class IdentifierExtractorKind { pattern_based, pluggable };

// Raw code text -> identifier names (before splitting).
using IdentifierExtractor = std::function<std::vector<std::string>(std::string_view)>;

struct CodePipelineConfig {
  IdentifierExtractorKind identifier_extractor = IdentifierExtractorKind::pattern_based;
  IdentifierExtractor custom_extractor;  // used when kind == pluggable
  bool split_camel = true;
  bool split_snake = true;
  std::unordered_set<std::string> keywords;
  std::size_t min_token_length = 2;

  static CodePipelineConfig defaults();
  void validate() const;
};

struct IssueCode {
  std::vector<std::string> code_blocks;
  std::string remaining_text;
};

Tokens preprocess_text(std::string_view raw, const TextPipelineConfig& cfg);

// Removes fenced (```), {code}/{noformat}, indented and inline (`...`) code
// from prose. Block contents exclude their delimiters.
IssueCode extract_issue_code(std::string_view raw);

Tokens extract_identifiers(std::string_view code, const CodePipelineConfig& cfg);

// Regex-driven identifier finder used by the pattern_based extractor.
std::vector<std::string> find_identifier_names(std::string_view code,
                                               const std::unordered_set<std::string>& keywords);

// camelCase / snake_case split, lowercased; digits stay attached.
Tokens split_identifier(std::string_view identifier, bool split_camel, bool split_snake);

// Porter (1980) suffix stripping applied until the word stops changing.
std::string porter_stem(std::string_view word);

const std::unordered_set<std::string>& default_english_stopwords();
const std::unordered_set<std::string>& default_code_keywords();

// One token per line; blank lines and lines starting with '#' ignored.
std::unordered_set<std::string> load_word_list(const std::string& path);

std::string to_lower_ascii(std::string_view s);

}  // namespace commitlink
