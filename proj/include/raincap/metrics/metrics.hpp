#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace raincap::metrics {

using Tokens = std::vector<std::string>;
using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, int>;

struct EvalItem {
  int image_id = 0;
  Tokens hypothesis;
  std::vector<Tokens> references;  // at least one
};
using EvalCorpus = std::vector<EvalItem>;

/// Throws std::invalid_argument for an empty corpus or an item without references.
void validate(const EvalCorpus& corpus);

NGramCounts ngram_counts(const Tokens& s, int n);

struct Clipped {
  long matched = 0;  // hypothesis n-grams, clipped by the max count in any one reference
  long total = 0;    // hypothesis n-grams
};
Clipped clipped_counts(const Tokens& hyp, const std::vector<Tokens>& refs, int n);

/// Corpus BLEU-1..n_max (index 0 is BLEU-1), no smoothing, closest reference
/// length for the brevity penalty (shorter wins ties).
std::vector<double> bleu(const EvalCorpus& corpus, int n_max = 4);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
inline constexpr double kRougeBeta = 1.2;
double rouge_l_pair(const Tokens& hyp, const Tokens& ref, double beta = kRougeBeta);
/// Max over references, mean over the corpus.
double rouge_l(const EvalCorpus& corpus);

inline constexpr double kCiderScale = 10.0;
/// tf-idf cosine per n = 1..4, idf = log(M / (1 + df)); needs two distinct images.
double cider(const EvalCorpus& corpus);

struct Alignment {
  int matches = 0;
  int chunks = 0;
};
/// Exact unigram alignment with the most matches and, among those, fewest chunks.
Alignment meteor_align(const Tokens& hyp, const Tokens& ref);
double meteor_pair(const Tokens& hyp, const Tokens& ref);
/// No stemming or synonyms. Max over references, mean over the corpus.
double meteor_simplified(const EvalCorpus& corpus);

struct Scores {
  std::array<double, 4> bleu{};
  double meteor = 0;
  double rouge = 0;
  double cider = 0;
};
Scores score_corpus(const EvalCorpus& corpus);

/// Row names of the report, in order.
inline const std::array<std::string, 5> kTableRows{"NIC_T", "NIC_S", "NIC_T(D)", "Proposed", "NIC_T clean input"};

struct TableRow {
  std::string name;
  Scores scores;
};

struct Report {
  std::vector<TableRow> rows;  // kTableRows order
  std::string config_hash;
  std::uint64_t seed = 0;

  std::string tsv() const;
  std::string text() const;
  const Scores& row(const std::string& name) const;
};

/// Every kTableRows name must be present and all corpora must cover the same
/// image ids; throws std::invalid_argument otherwise.
Report evaluate_table(const std::map<std::string, EvalCorpus>& corpora, const std::string& config_hash,
                      std::uint64_t seed);

}  // namespace raincap::metrics
