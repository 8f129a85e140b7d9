#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rrg {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr std::size_t kReservedTokens = 4;

/// Lowercased word/punctuation split. A word is a maximal run of ASCII
/// letters and digits; every other non-space character (a whole UTF-8
/// sequence for non-ASCII) is a token of its own.
std::vector<std::string> split_words(std::string_view text);

/// Canonical text form: split_words joined by the detokenize spacing rule.
std::string normalize_text(std::string_view text);

/// Word-level vocabulary with fixed reserved ids [PAD]=0 [BOS]=1 [EOS]=2 [UNK]=3.
class Vocabulary {
 public:
  Vocabulary();
  /// Reserved tokens followed by `words` in the given order.
  explicit Vocabulary(const std::vector<std::string>& words);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  /// kUnk for unknown words.
  int id(const std::string& word) const;
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line, line number = id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Reserved tokens plus every word with frequency >= min_freq, ordered by
/// descending frequency then lexicographically; at most `cap` entries in
/// total when cap > 0. Throws on an empty corpus.
Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_freq = 1, std::size_t cap = 0);

/// No [BOS]/[EOS] added; unknown words map to [UNK].
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);

/// Reserved tokens are dropped; words are joined by single spaces except
/// that no space precedes '.', ',', ';', ':', '?', '!' or ')' and none
/// follows '('. Throws std::out_of_range on ids outside the vocabulary.
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

}  // namespace rrg
