#include "raincap/caption/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace raincap::caption {

namespace {
const std::vector<std::string> kSpecials{"<pad>", "<start>", "<end>", "<unk>"};
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (std::isalnum(u) || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Vocabulary::Vocabulary() : tokens_(kSpecials) {
  for (int i = 0; i < num_specials; ++i) ids_[tokens_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& sentence : corpus)
    for (const auto& t : sentence) ++counts[t];
  Vocabulary v;
  for (const auto& [token, n] : counts) {
    if (n < min_count || v.ids_.count(token)) continue;
    v.ids_[token] = v.size();
    v.tokens_.push_back(token);
  }
  return v;
}

Vocabulary Vocabulary::from_lines(const std::vector<std::string>& lines) {
  if (lines.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), lines.begin()))
    throw std::invalid_argument("vocabulary must start with the special tokens <pad> <start> <end> <unk>");
  Vocabulary v;
  for (std::size_t i = kSpecials.size(); i < lines.size(); ++i) {
    if (lines[i].empty() || v.ids_.count(lines[i])) throw std::invalid_argument("vocabulary line " + std::to_string(i + 1) + " is empty or repeated");
    v.ids_[lines[i]] = v.size();
    v.tokens_.push_back(lines[i]);
  }
  return v;
}

std::vector<std::string> Vocabulary::to_lines() const { return tokens_; }

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? unk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens, int max_len) const {
  if (static_cast<int>(tokens.size()) + 2 > max_len)
    throw std::length_error("caption of " + std::to_string(tokens.size()) + " tokens exceeds max length " +
                            std::to_string(max_len));
  std::vector<int> ids{start};
  for (const auto& t : tokens) ids.push_back(id(t));
  ids.push_back(end);
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int i : ids) {
    if (i == end) break;
    if (i < num_specials) continue;
    out.push_back(token(i));
  }
  return out;
}

}  // namespace raincap::caption
