#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "raincap/caption/vocab.hpp"
#include "raincap/metrics/metrics.hpp"
#include "metric_oracles.hpp"

using namespace raincap::metrics;
using namespace oracles;

namespace {

Tokens T(const std::string& s) { return raincap::caption::tokenize(s); }

EvalCorpus single(const std::string& hyp, std::vector<std::string> refs, int id = 0) {
  EvalItem item{id, T(hyp), {}};
  for (const auto& r : refs) item.references.push_back(T(r));
  return {item};
}

}  // namespace

TEST_CASE("fixed examples") {
  const auto k = clipped_counts(T("the the the the the the the"), {T("the cat is on the mat")}, 1);
  CHECK(k.matched == 2);
  CHECK(k.total == 7);
  CHECK(bleu(single("the the the the the the the", {"the cat is on the mat"}), 1)[0] == 2.0 / 7.0);

  CHECK(lcs_length(T("a c d"), T("a b c d")) == 3);
  const double R = 0.75, P = 1.0;
  CHECK(rouge_l_pair(T("a c d"), T("a b c d")) == doctest::Approx((1 + 1.44) * R * P / (R + 1.44 * P)).epsilon(1e-15));

  const Alignment same = meteor_align(T("a b c d"), T("a b c d"));
  CHECK(same.matches == 4);
  CHECK(same.chunks == 1);
  CHECK(meteor_pair(T("a b c d"), T("a b c d")) == 0.9921875);
  const Alignment rev = meteor_align(T("b a"), T("a b"));
  CHECK(rev.matches == 2);
  CHECK(rev.chunks == 2);
  CHECK(meteor_pair(T("b a"), T("a b")) == 0.5);
}

TEST_CASE("perfect and disjoint hypotheses") {
  const EvalCorpus perfect{{0, T("a red circle above a blue square"), {T("a red circle above a blue square")}},
                           {1, T("there is one green triangle"), {T("there is one green triangle")}},
                           {2, T("two shapes a cyan circle left of a white square"),
                            {T("two shapes a cyan circle left of a white square")}}};
  for (double b : bleu(perfect)) CHECK(b == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rouge_l(perfect) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cider(perfect) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(meteor_simplified(perfect) > 0.99);

  const EvalCorpus disjoint{{0, T("x y z"), {T("a b c")}}, {1, T("p q"), {T("d e")}}};
  for (double b : bleu(disjoint)) CHECK(b == 0.0);
  CHECK(rouge_l(disjoint) == 0.0);
  CHECK(cider(disjoint) == 0.0);
  CHECK(meteor_simplified(disjoint) == 0.0);
  CHECK(rouge_l_pair({}, T("a")) == 0.0);
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(bleu({}), std::invalid_argument);
  CHECK_THROWS_AS(rouge_l({{0, T("a"), {}}}), std::invalid_argument);
  CHECK_THROWS_AS(cider(single("a", {"a"})), std::invalid_argument);
  CHECK_THROWS_AS(meteor_simplified({{0, T("a"), {T("a")}}, {0, T("b"), {T("b")}}}), std::invalid_argument);
  CHECK(meteor_pair({}, T("a")) == 0.0);
}

TEST_CASE("agreement with brute-force oracles on 100 random corpora") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const EvalCorpus c = random_corpus(rng);
    const auto b = bleu(c, 4);
    const auto bo = bleu_oracle(c, 4);
    for (int n = 0; n < 4; ++n) CHECK(std::abs(b[n] - bo[n]) < 1e-9);
    CHECK(std::abs(rouge_l(c) - rouge_oracle(c)) < 1e-9);
    CHECK(std::abs(cider(c) - cider_oracle(c)) < 1e-9);
    CHECK(std::abs(meteor_simplified(c) - meteor_oracle(c)) < 1e-9);
    for (const auto& it : c)
      for (const auto& r : it.references) {
        CHECK(lcs_length(it.hypothesis, r) == lcs_oracle(it.hypothesis, r));
        const Alignment a = meteor_align(it.hypothesis, r), o = align_oracle(it.hypothesis, r);
        CHECK(a.matches == o.matches);
        CHECK(a.chunks == o.chunks);
      }
    const Scores s = score_corpus(c);
    for (double v : s.bleu) CHECK((v >= 0 && v <= 1 + 1e-12));
    CHECK((s.meteor >= 0 && s.meteor <= 1));
    CHECK((s.rouge >= 0 && s.rouge <= 1 + 1e-12));
    CHECK((s.cider >= -1e-12 && s.cider <= 10 + 1e-9));
  }
}

TEST_CASE("ngram counts") {
  const auto c = ngram_counts(T("a b a b a"), 2);
  CHECK(c.at({"a", "b"}) == 2);
  CHECK(c.at({"b", "a"}) == 2);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tokens s;
    const int len = std::uniform_int_distribution<int>(0, 9)(rng);
    for (int i = 0; i < len; ++i) s.push_back(std::string(1, char('a' + rng() % 3)));
    for (int n = 1; n <= 4; ++n) {
      int total = 0;
      for (const auto& [g, k] : ngram_counts(s, n)) {
        CHECK(k >= 1);
        total += k;
      }
      CHECK(total == std::max(0, len - n + 1));
    }
  }
  CHECK_THROWS_AS(ngram_counts(T("a"), 0), std::invalid_argument);
}

TEST_CASE("BLEU-4 does not rise when the final matching token is dropped") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    EvalCorpus c = random_corpus(rng);
    for (auto& it : c) {
      while (it.references.front().size() < 4) it.references.front().push_back("a");
      it.hypothesis = it.references.front();
    }
    const double full = bleu(c)[3];
    CHECK(full == doctest::Approx(1.0));
    auto& victim = c[static_cast<std::size_t>(trial) % c.size()];
    victim.hypothesis.pop_back();
    CHECK(bleu(c)[3] <= full + 1e-12);
  }
}

TEST_CASE("long repetitive sentences align quickly") {
  const Tokens h(20, "a"), r(20, "a");
  const Alignment a = meteor_align(h, r);
  CHECK(a.matches == 20);
  CHECK(a.chunks == 1);
  Tokens mixed;
  for (int i = 0; i < 20; ++i) mixed.push_back(i % 2 ? "a" : "b");
  CHECK(meteor_align(mixed, mixed).chunks == 1);
}

TEST_CASE("table report") {
  std::map<std::string, EvalCorpus> rows;
  const EvalCorpus good{{0, T("a red circle"), {T("a red circle"), T("there is a red circle")}},
                        {1, T("a blue square"), {T("a blue square")}}};
  const EvalCorpus bad{{0, T("a blue circle"), {T("a red circle"), T("there is a red circle")}},
                       {1, T("a red square"), {T("a blue square")}}};
  for (const auto& name : kTableRows) rows[name] = name == "NIC_T" ? bad : good;
  const Report rep = evaluate_table(rows, "abc123", 7);
  CHECK(rep.rows.size() == 5);
  CHECK(rep.rows.front().name == "NIC_T");
  CHECK(rep.row("NIC_T clean input").bleu[0] >= rep.row("NIC_T").bleu[0]);
  const std::string tsv = rep.tsv();
  CHECK(tsv.find("config_hash abc123 seed 7") != std::string::npos);
  CHECK(tsv.find("Proposed\t100.0000") != std::string::npos);
  CHECK(rep.text().find("abc123") != std::string::npos);
  CHECK(evaluate_table(rows, "abc123", 7).tsv() == tsv);

  auto missing = rows;
  missing.erase("NIC_S");
  CHECK_THROWS_AS(evaluate_table(missing, "x", 1), std::invalid_argument);
  auto shifted = rows;
  shifted["NIC_S"][1].image_id = 9;
  CHECK_THROWS_AS(evaluate_table(shifted, "x", 1), std::invalid_argument);
  auto extra = rows;
  extra["Other"] = good;
  CHECK_THROWS_AS(evaluate_table(extra, "x", 1), std::invalid_argument);
}
