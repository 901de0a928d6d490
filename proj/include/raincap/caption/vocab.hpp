#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace raincap::caption {

inline constexpr int kMaxCaptionLength = 20;

/// Lowercase, drop everything but letters, digits and apostrophes, split on
/// whitespace.
std::vector<std::string> tokenize(std::string_view text);

std::string join(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  static constexpr int pad = 0;
  static constexpr int start = 1;
  static constexpr int end = 2;
  static constexpr int unk = 3;
  static constexpr int num_specials = 4;

  Vocabulary();

  /// Specials first, then every token seen at least `min_count` times in
  /// lexicographic order.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus, int min_count = 1);
  /// One token per line, id = line number (specials included).
  static Vocabulary from_lines(const std::vector<std::string>& lines);
  std::vector<std::string> to_lines() const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // unk when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  /// start, tokens..., end. Throws std::length_error when the result would
  /// exceed `max_len` ids.
  std::vector<int> encode(const std::vector<std::string>& tokens, int max_len = kMaxCaptionLength) const;
  /// Drops special ids and stops at the first end id.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct CaptionSample {
  int image_id = 0;
  std::vector<int> ids;  // start ... end
  std::string text;
};

}  // namespace raincap::caption
