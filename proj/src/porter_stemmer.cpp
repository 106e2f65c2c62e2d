// Porter's suffix-stripping algorithm over lowercase ASCII words.

#include <string>
#include <string_view>

#include "commitlink/preprocess.hpp"

namespace commitlink {
namespace {

class PorterWord {
 public:
  explicit PorterWord(std::string_view w) : b_(w) {}

  std::string run() {
    if (b_.size() <= 2) return b_;
    step1ab();
    if (b_.size() > 1) {
      step1c();
      step2();
      step3();
      step4();
      step5();
    }
    return b_;
  }

 private:
  std::string b_;
  std::size_t j_ = 0;  // end of stem (exclusive) after a successful ends()

  bool cons(std::size_t i) const {
    switch (b_[i]) {
      case 'a': case 'e': case 'i': case 'o': case 'u':
        return false;
      case 'y':
        return i == 0 ? true : !cons(i - 1);
      default:
        return true;
    }
  }

  // Number of VC sequences in b_[0, j_).
  int measure() const {
    int n = 0;
    std::size_t i = 0;
    while (true) {
      if (i >= j_) return n;
      if (!cons(i)) break;
      ++i;
    }
    ++i;
    while (true) {
      while (true) {
        if (i >= j_) return n;
        if (cons(i)) break;
        ++i;
      }
      ++i;
      ++n;
      while (true) {
        if (i >= j_) return n;
        if (!cons(i)) break;
        ++i;
      }
      ++i;
    }
  }

  bool vowel_in_stem() const {
    for (std::size_t i = 0; i < j_; ++i) {
      if (!cons(i)) return true;
    }
    return false;
  }

  bool double_cons(std::size_t end) const {  // b_[end-2..end-1] doubled consonant
    if (end < 2) return false;
    if (b_[end - 1] != b_[end - 2]) return false;
    return cons(end - 1);
  }

  // cvc at stem end where the last c is not w, x or y.
  bool cvc(std::size_t end) const {
    if (end < 3) return false;
    const std::size_t i = end - 1;
    if (!cons(i) || cons(i - 1) || !cons(i - 2)) return false;
    const char ch = b_[i];
    return ch != 'w' && ch != 'x' && ch != 'y';
  }

  bool ends(std::string_view s) {
    if (s.size() > b_.size()) return false;
    if (b_.compare(b_.size() - s.size(), s.size(), s) != 0) return false;
    j_ = b_.size() - s.size();
    return true;
  }

  void set_to(std::string_view s) { b_.replace(j_, b_.size() - j_, s); }

  void replace_if_m_positive(std::string_view s) {
    if (measure() > 0) set_to(s);
  }

  void step1ab() {
    if (b_.back() == 's') {
      if (ends("sses")) {
        set_to("ss");
      } else if (ends("ies")) {
        set_to("i");
      } else if (b_.size() >= 2 && b_[b_.size() - 2] != 's') {
        b_.pop_back();
      }
    }
    if (ends("eed")) {
      if (measure() > 0) b_.pop_back();
      return;
    }
    bool stripped = false;
    if (ends("ed") && vowel_in_stem()) {
      b_.resize(j_);
      stripped = true;
    } else if (ends("ing") && vowel_in_stem()) {
      b_.resize(j_);
      stripped = true;
    }
    if (!stripped) return;
    j_ = b_.size();
    if (ends("at")) {
      set_to("ate");
    } else if (ends("bl")) {
      set_to("ble");
    } else if (ends("iz")) {
      set_to("ize");
    } else if (double_cons(b_.size())) {
      const char ch = b_.back();
      if (ch != 'l' && ch != 's' && ch != 'z') b_.pop_back();
    } else {
      j_ = b_.size();
      if (measure() == 1 && cvc(b_.size())) b_.push_back('e');
    }
  }

  void step1c() {
    if (ends("y") && vowel_in_stem()) b_.back() = 'i';
  }

  void step2() {
    static constexpr std::pair<std::string_view, std::string_view> kRules[] = {
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"}, {"anci", "ance"},
        {"izer", "ize"},    {"bli", "ble"},     {"alli", "al"},   {"entli", "ent"},
        {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
        {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
        {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"}, {"biliti", "ble"},
        {"logi", "log"},
    };
    for (const auto& [suffix, repl] : kRules) {
      if (ends(suffix)) {
        replace_if_m_positive(repl);
        return;
      }
    }
  }

  void step3() {
    static constexpr std::pair<std::string_view, std::string_view> kRules[] = {
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
        {"ical", "ic"},  {"ful", ""},   {"ness", ""},
    };
    for (const auto& [suffix, repl] : kRules) {
      if (ends(suffix)) {
        replace_if_m_positive(repl);
        return;
      }
    }
  }

  void step4() {
    static constexpr std::string_view kSuffixes[] = {
        "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement", "ment",
        "ent", "ion",  "ou",   "ism", "ate", "iti",  "ous",  "ive", "ize",
    };
    for (auto suffix : kSuffixes) {
      if (!ends(suffix)) continue;
      // "ement" and "ment" must be tried before "ent"; the table order does that.
      if (suffix == "ion" && !(j_ > 0 && (b_[j_ - 1] == 's' || b_[j_ - 1] == 't'))) {
        return;
      }
      if (measure() > 1) b_.resize(j_);
      return;
    }
  }

  void step5() {
    j_ = b_.size();
    if (b_.back() == 'e') {
      j_ = b_.size() - 1;
      const int m = measure();
      if (m > 1 || (m == 1 && !cvc(j_))) b_.pop_back();
    }
    j_ = b_.size();
    if (b_.back() == 'l' && double_cons(b_.size())) {
      j_ = b_.size() - 1;
      if (measure() > 1) b_.pop_back();
    }
  }
};

}  // namespace

std::string porter_stem(std::string_view word) {
  std::string current(word);
  for (int guard = 0; guard < 8; ++guard) {
    std::string next = PorterWord(current).run();
    if (next == current) break;
    current = std::move(next);
  }
  return current;
}

}  // namespace commitlink
