#pragma once

#include <string>
#include <vector>

#include "scribe/common.hpp"

namespace scribe {

using LabelSeq = std::vector<int>;

/// Character inventory plus the two reserved indices: EOS (second-to-last,
/// attention head only) and blank (last, CTC head only). Indices are stable
/// given the same character list.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::string chars) : chars_(std::move(chars)) {
    for (size_t i = 0; i < chars_.size(); ++i)
      for (size_t j = i + 1; j < chars_.size(); ++j)
        if (chars_[i] == chars_[j])
          throw ConfigError(std::string("vocab has duplicate character '") + chars_[i] + "'");
    if (chars_.empty()) throw ConfigError("vocab must contain at least one character");
  }

  static Vocab digits() { return Vocab("0123456789 "); }

  // 79 characters; with the blank this mirrors an 80-way output layer.
  static Vocab full() {
    return Vocab(
        "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
        "abcdefghijklmnopqrstuvwxyz"
        "0123456789"
        " .,;:!?'\"()-&*+/#");
  }

  int n_chars() const { return static_cast<int>(chars_.size()); }
  int size() const { return n_chars() + 2; }  // chars + EOS + blank
  int eos_index() const { return n_chars(); }
  int blank_index() const { return n_chars() + 1; }
  // Output width of the attention head: characters + EOS, no blank.
  int attention_classes() const { return n_chars() + 1; }

  const std::string& chars() const { return chars_; }

  bool contains(char c) const { return chars_.find(c) != std::string::npos; }

  int index_of(char c) const {
    auto pos = chars_.find(c);
    if (pos == std::string::npos)
      throw DomainError(std::string("character '") + c + "' not in vocabulary");
    return static_cast<int>(pos);
  }

  LabelSeq encode(const std::string& text) const {
    LabelSeq out;
    out.reserve(text.size());
    for (char c : text) out.push_back(index_of(c));
    return out;
  }

  LabelSeq encode_with_eos(const std::string& text) const {
    LabelSeq out = encode(text);
    out.push_back(eos_index());
    return out;
  }

  /// Back to text; reserved indices render as nothing.
  std::string decode(const LabelSeq& seq) const {
    std::string out;
    for (int idx : seq)
      if (idx >= 0 && idx < n_chars()) out.push_back(chars_[static_cast<size_t>(idx)]);
    return out;
  }

  bool operator==(const Vocab& o) const { return chars_ == o.chars_; }

 private:
  std::string chars_;
};

}  // namespace scribe
