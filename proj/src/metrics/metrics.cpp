#include "raincap/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace raincap::metrics {

void validate(const EvalCorpus& corpus) {
  if (corpus.empty()) throw std::invalid_argument("empty evaluation corpus");
  std::set<int> ids;
  for (const auto& item : corpus) {
    if (item.references.empty())
      throw std::invalid_argument("image " + std::to_string(item.image_id) + " has no references");
    if (!ids.insert(item.image_id).second)
      throw std::invalid_argument("image " + std::to_string(item.image_id) + " appears twice");
  }
}

NGramCounts ngram_counts(const Tokens& s, int n) {
  NGramCounts out;
  if (n < 1) throw std::invalid_argument("n-gram order must be positive");
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i)
    ++out[NGram(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return out;
}

Clipped clipped_counts(const Tokens& hyp, const std::vector<Tokens>& refs, int n) {
  NGramCounts max_ref;
  for (const auto& r : refs)
    for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
  Clipped out;
  for (const auto& [g, c] : ngram_counts(hyp, n)) {
    out.total += c;
    const auto it = max_ref.find(g);
    if (it != max_ref.end()) out.matched += std::min(c, it->second);
  }
  return out;
}

std::vector<double> bleu(const EvalCorpus& corpus, int n_max) {
  validate(corpus);
  if (n_max < 1) throw std::invalid_argument("BLEU order must be positive");
  std::vector<long> matched(static_cast<std::size_t>(n_max)), total(static_cast<std::size_t>(n_max));
  long c = 0, r = 0;
  for (const auto& item : corpus) {
    for (int n = 1; n <= n_max; ++n) {
      const Clipped k = clipped_counts(item.hypothesis, item.references, n);
      matched[static_cast<std::size_t>(n - 1)] += k.matched;
      total[static_cast<std::size_t>(n - 1)] += k.total;
    }
    const long hl = static_cast<long>(item.hypothesis.size());
    long best = -1;
    for (const auto& ref : item.references) {
      const long rl = static_cast<long>(ref.size());
      if (best < 0 || std::abs(rl - hl) < std::abs(best - hl) || (std::abs(rl - hl) == std::abs(best - hl) && rl < best))
        best = rl;
    }
    c += hl;
    r += best;
  }
  const double bp = c == 0 ? 0.0 : (c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0);
  std::vector<double> out(static_cast<std::size_t>(n_max));
  double log_sum = 0;
  bool zero = false;
  for (int n = 1; n <= n_max; ++n) {
    const auto i = static_cast<std::size_t>(n - 1);
    if (matched[i] == 0 || total[i] == 0) zero = true;
    if (!zero) log_sum += std::log(static_cast<double>(matched[i]) / static_cast<double>(total[i]));
    out[i] = zero ? 0.0 : bp * std::exp(log_sum / n);
  }
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_pair(const Tokens& hyp, const Tokens& ref, double beta) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs_length(hyp, ref));
  if (l == 0) return 0.0;
  const double R = l / static_cast<double>(ref.size());
  const double P = l / static_cast<double>(hyp.size());
  const double b2 = beta * beta;
  return (1 + b2) * R * P / (R + b2 * P);
}

double rouge_l(const EvalCorpus& corpus) {
  validate(corpus);
  double sum = 0;
  for (const auto& item : corpus) {
    double best = 0;
    for (const auto& ref : item.references) best = std::max(best, rouge_l_pair(item.hypothesis, ref));
    sum += best;
  }
  return sum / static_cast<double>(corpus.size());
}

double cider(const EvalCorpus& corpus) {
  validate(corpus);
  if (corpus.size() < 2) throw std::invalid_argument("CIDEr needs at least two images");
  const double M = static_cast<double>(corpus.size());
  double total = 0;
  std::vector<double> per_image(corpus.size(), 0.0);
  for (int n = 1; n <= 4; ++n) {
    std::map<NGram, int> df;
    for (const auto& item : corpus) {
      std::set<NGram> seen;
      for (const auto& ref : item.references)
        for (const auto& [g, c] : ngram_counts(ref, n)) seen.insert(g);
      for (const auto& g : seen) ++df[g];
    }
    auto idf = [&](const NGram& g) {
      const auto it = df.find(g);
      return std::log(M / (1.0 + (it == df.end() ? 0 : it->second)));
    };
    auto vec = [&](const Tokens& s) {
      std::map<NGram, double> v;
      for (const auto& [g, c] : ngram_counts(s, n)) v[g] = c * idf(g);
      return v;
    };
    auto norm = [](const std::map<NGram, double>& v) {
      double s = 0;
      for (const auto& [g, x] : v) s += x * x;
      return std::sqrt(s);
    };
    for (std::size_t k = 0; k < corpus.size(); ++k) {
      const auto h = vec(corpus[k].hypothesis);
      const double hn = norm(h);
      double sim = 0;
      for (const auto& ref : corpus[k].references) {
        const auto rv = vec(ref);
        const double rn = norm(rv);
        if (hn == 0 || rn == 0) continue;
        double dot = 0;
        for (const auto& [g, x] : h) {
          const auto it = rv.find(g);
          if (it != rv.end()) dot += x * it->second;
        }
        sim += dot / (hn * rn);
      }
      per_image[k] += sim / static_cast<double>(corpus[k].references.size()) / 4.0;
    }
  }
  for (double s : per_image) total += s;
  return kCiderScale * total / M;
}

namespace {

struct AlignSearch {
  const Tokens& hyp;
  std::vector<std::vector<int>> candidates;  // ref positions per hyp position
  std::vector<int> word;                     // word index per hyp position
  std::vector<int> need;                     // matches still owed per word
  std::vector<int> spare;                    // hyp occurrences that may stay unmatched, per word
  std::vector<char> used;
  int best = std::numeric_limits<int>::max();

  void run(std::size_t i, int prev, int chunks) {
    if (chunks >= best) return;
    if (i == hyp.size()) {
      best = chunks;
      return;
    }
    const int w = word[i];
    if (w >= 0 && need[static_cast<std::size_t>(w)] > 0) {
      const auto& cand = candidates[i];
      // continuing the current chunk first finds good bounds early
      auto try_pos = [&](int j) {
        if (used[static_cast<std::size_t>(j)]) return;
        used[static_cast<std::size_t>(j)] = 1;
        --need[static_cast<std::size_t>(w)];
        run(i + 1, j, chunks + ((prev >= 0 && j == prev + 1) ? 0 : 1));
        ++need[static_cast<std::size_t>(w)];
        used[static_cast<std::size_t>(j)] = 0;
      };
      if (prev >= 0 && std::binary_search(cand.begin(), cand.end(), prev + 1)) try_pos(prev + 1);
      for (int j : cand)
        if (!(prev >= 0 && j == prev + 1)) try_pos(j);
    }
    if (w < 0) {
      run(i + 1, -1, chunks);
    } else if (spare[static_cast<std::size_t>(w)] > 0) {
      --spare[static_cast<std::size_t>(w)];
      run(i + 1, -1, chunks);
      ++spare[static_cast<std::size_t>(w)];
    }
  }
};

}  // namespace

Alignment meteor_align(const Tokens& hyp, const Tokens& ref) {
  std::unordered_map<std::string, int> index;
  std::vector<std::vector<int>> ref_pos;
  for (std::size_t j = 0; j < ref.size(); ++j) {
    auto [it, inserted] = index.emplace(ref[j], static_cast<int>(ref_pos.size()));
    if (inserted) ref_pos.emplace_back();
    ref_pos[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(j));
  }
  AlignSearch s{hyp, {}, {}, {}, {}, std::vector<char>(ref.size(), 0)};
  std::vector<int> hyp_count(ref_pos.size(), 0);
  for (const auto& t : hyp) {
    const auto it = index.find(t);
    const int w = it == index.end() ? -1 : it->second;
    s.word.push_back(w);
    s.candidates.push_back(w < 0 ? std::vector<int>{} : ref_pos[static_cast<std::size_t>(w)]);
    if (w >= 0) ++hyp_count[static_cast<std::size_t>(w)];
  }
  Alignment a;
  for (std::size_t w = 0; w < ref_pos.size(); ++w) {
    const int m = std::min(hyp_count[w], static_cast<int>(ref_pos[w].size()));
    s.need.push_back(m);
    s.spare.push_back(hyp_count[w] - m);
    a.matches += m;
  }
  if (a.matches == 0) return a;
  s.run(0, -1, 0);
  a.chunks = s.best;
  return a;
}

double meteor_pair(const Tokens& hyp, const Tokens& ref) {
  const Alignment a = meteor_align(hyp, ref);
  if (a.matches == 0) return 0.0;
  const double P = static_cast<double>(a.matches) / static_cast<double>(hyp.size());
  const double R = static_cast<double>(a.matches) / static_cast<double>(ref.size());
  const double F = 10 * P * R / (R + 9 * P);
  const double frag = static_cast<double>(a.chunks) / static_cast<double>(a.matches);
  return F * (1 - 0.5 * frag * frag * frag);
}

double meteor_simplified(const EvalCorpus& corpus) {
  validate(corpus);
  double sum = 0;
  for (const auto& item : corpus) {
    double best = 0;
    for (const auto& ref : item.references) best = std::max(best, meteor_pair(item.hypothesis, ref));
    sum += best;
  }
  return sum / static_cast<double>(corpus.size());
}

Scores score_corpus(const EvalCorpus& corpus) {
  Scores s;
  const auto b = bleu(corpus, 4);
  std::copy(b.begin(), b.end(), s.bleu.begin());
  s.meteor = meteor_simplified(corpus);
  s.rouge = rouge_l(corpus);
  s.cider = cider(corpus);
  return s;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const char* kMetricNote = "# BLEU corpus-level without smoothing; ROUGE-L beta 1.2; CIDEr x10 with idf log(M/(1+df)); "
                          "METEOR exact matches only. BLEU/METEOR/ROUGE x100, CIDEr raw.\n";

}  // namespace

const Scores& Report::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r.scores;
  throw std::out_of_range("no report row " + name);
}

std::string Report::tsv() const {
  std::string out = "# config_hash " + config_hash + " seed " + std::to_string(seed) + "\n";
  out += kMetricNote;
  out += "encoder\tBLEU-1\tBLEU-2\tBLEU-3\tBLEU-4\tMETEOR\tROUGE\tCIDEr\n";
  for (const auto& r : rows) {
    out += r.name;
    for (double b : r.scores.bleu) out += "\t" + fmt("%.4f", 100 * b);
    out += "\t" + fmt("%.4f", 100 * r.scores.meteor) + "\t" + fmt("%.4f", 100 * r.scores.rouge) + "\t" +
           fmt("%.6f", r.scores.cider) + "\n";
  }
  return out;
}

std::string Report::text() const {
  std::string out = "config " + config_hash + ", seed " + std::to_string(seed) + "\n";
  out += kMetricNote;
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %7s %7s %7s %7s %7s %7s %7s\n", "encoder", "B-1", "B-2", "B-3", "B-4",
                "METEOR", "ROUGE", "CIDEr");
  out += line;
  for (const auto& r : rows) {
    const auto& s = r.scores;
    std::snprintf(line, sizeof line, "%-18s %7.2f %7.2f %7.2f %7.2f %7.2f %7.2f %7.4f\n", r.name.c_str(),
                  100 * s.bleu[0], 100 * s.bleu[1], 100 * s.bleu[2], 100 * s.bleu[3], 100 * s.meteor, 100 * s.rouge,
                  s.cider);
    out += line;
  }
  return out;
}

Report evaluate_table(const std::map<std::string, EvalCorpus>& corpora, const std::string& config_hash,
                      std::uint64_t seed) {
  Report rep;
  rep.config_hash = config_hash;
  rep.seed = seed;
  std::set<int> ids;
  for (const auto& name : kTableRows) {
    const auto it = corpora.find(name);
    if (it == corpora.end()) throw std::invalid_argument("report is missing the " + name + " row");
    std::set<int> these;
    for (const auto& item : it->second) these.insert(item.image_id);
    if (ids.empty()) ids = these;
    else if (these != ids) throw std::invalid_argument("row " + name + " covers a different image set");
    rep.rows.push_back({name, score_corpus(it->second)});
  }
  for (const auto& [name, c] : corpora)
    if (std::find(kTableRows.begin(), kTableRows.end(), name) == kTableRows.end())
      throw std::invalid_argument("unknown report row " + name);
  return rep;
}

}  // namespace raincap::metrics
