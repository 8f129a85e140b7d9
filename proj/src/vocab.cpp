#include "rrg/vocab.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

#include "rrg/errors.h"

namespace rrg {
namespace {

const char* const kReservedNames[kReservedTokens] = {"[PAD]", "[BOS]", "[EOS]", "[UNK]"};

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

std::size_t utf8_length(unsigned char lead) {
  if (lead >= 0xF0) return 4;
  if (lead >= 0xE0) return 3;
  if (lead >= 0xC0) return 2;
  return 1;
}

bool attaches_left(const std::string& tok) {
  return tok == "." || tok == "," || tok == ";" || tok == ":" || tok == "?" || tok == "!" || tok == ")";
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  bool glue_next = false;
  for (const auto& w : words) {
    if (!out.empty() && !glue_next && !attaches_left(w)) out += ' ';
    out += w;
    glue_next = (w == "(");
  }
  return out;
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (is_word_char(c)) {
      std::string w;
      while (i < text.size() && is_word_char(static_cast<unsigned char>(text[i])))
        w += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i++])));
      out.push_back(std::move(w));
    } else {
      const std::size_t len = std::min(utf8_length(c), text.size() - i);
      out.emplace_back(text.substr(i, len));
      i += len;
    }
  }
  return out;
}

std::string normalize_text(std::string_view text) { return join_words(split_words(text)); }

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  for (const char* r : kReservedNames) tokens_.emplace_back(r);
  for (const auto& w : words) tokens_.push_back(w);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " outside [0, " +
                            std::to_string(tokens_.size()) + ")");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < kReservedTokens)
    throw DataError("vocabulary " + path.string() + " is missing reserved tokens");
  for (std::size_t i = 0; i < kReservedTokens; ++i)
    if (lines[i] != kReservedNames[i])
      throw DataError("vocabulary " + path.string() + ": line " + std::to_string(i + 1) + " should be " + kReservedNames[i]);
  return Vocabulary(std::vector<std::string>(lines.begin() + kReservedTokens, lines.end()));
}

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_freq, std::size_t cap) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& line : corpus)
    for (auto& w : split_words(line)) ++freq[w];
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [w, n] : freq)
    if (n >= min_freq) entries.emplace_back(w, n);
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (cap > 0 && entries.size() + kReservedTokens > cap)
    entries.resize(cap > kReservedTokens ? cap - kReservedTokens : 0);
  std::vector<std::string> words;
  words.reserve(entries.size());
  for (auto& e : entries) words.push_back(e.first);
  return Vocabulary(words);
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (int id : ids) {
    const std::string& t = vocab.token(id);
    if (id >= 0 && static_cast<std::size_t>(id) < kReservedTokens) continue;
    words.push_back(t);
  }
  return join_words(words);
}

}  // namespace rrg
