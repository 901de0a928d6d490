#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "raincap/caption/captioner.hpp"
#include "raincap/grad/gradcheck.hpp"
#include "raincap/harness/shapes.hpp"

using namespace raincap;
using namespace raincap::caption;
using grad::Tensor;
using TF = Tensor<float>;
using TD = Tensor<double>;

namespace {

template <class T>
Tensor<T> uniform(const grad::Shape& s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(s.numel()));
  for (auto& x : v) x = static_cast<T>(d(rng));
  return Tensor<T>::from_data(s, std::move(v));
}

template <class T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

CaptionDims tiny_dims() {
  CaptionDims d;
  d.grid = 2;
  d.widths = {2, 2, 3, 4};
  d.attention = 3;
  d.hidden = 4;
  d.embed = 3;
  return d;
}

struct Toy {
  std::vector<rain::Image> images;
  std::vector<CaptionSample> samples;  // canonical caption only
  Vocabulary vocab;
};

Toy toy(int n, std::uint64_t seed) {
  Toy t;
  const auto recs = harness::gen_shapes_dataset(n, seed);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : recs)
    for (const auto& c : r.captions) corpus.push_back(tokenize(c));
  t.vocab = Vocabulary::build(corpus);
  for (int i = 0; i < n; ++i) {
    t.images.push_back(recs[i].image);
    t.samples.push_back({i, t.vocab.encode(tokenize(recs[i].captions.front())), recs[i].captions.front()});
  }
  return t;
}

}  // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("A man, playing Tennis!") == std::vector<std::string>{"a", "man", "playing", "tennis"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("  don't\tSTOP \n") == std::vector<std::string>{"don't", "stop"});
  CHECK(tokenize("--- ,,, ").empty());
  for (const auto& r : harness::gen_shapes_dataset(50, 1))
    for (const auto& c : r.captions) CHECK(tokenize(join(tokenize(c))) == tokenize(c));
  const std::string noisy = "It's 3 Dogs;  two-CATS?";
  CHECK(tokenize(join(tokenize(noisy))) == tokenize(noisy));
}

TEST_CASE("vocabulary") {
  const Vocabulary v = Vocabulary::build({{"b", "a", "c"}, {"a"}});
  CHECK(v.size() == 7);
  CHECK(v.id("<pad>") == Vocabulary::pad);
  CHECK(v.id("<start>") == Vocabulary::start);
  CHECK(v.id("<end>") == Vocabulary::end);
  CHECK(v.id("<unk>") == Vocabulary::unk);
  CHECK(v.id("a") == 4);
  CHECK(v.id("zebra") == Vocabulary::unk);
  for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
  CHECK_THROWS_AS(v.token(7), std::out_of_range);

  const auto ids = v.encode({"c", "a", "zebra"});
  CHECK(ids == std::vector<int>{1, 6, 4, 3, 2});
  CHECK(v.decode(ids) == std::vector<std::string>{"c", "a"});
  CHECK(v.decode({1, 5, 2, 4}) == std::vector<std::string>{"b"});
  CHECK(v.encode(std::vector<std::string>(18, "a")).size() == 20);
  CHECK_THROWS_AS(v.encode(std::vector<std::string>(19, "a")), std::length_error);

  CHECK(Vocabulary::from_lines(v.to_lines()) == v);
  CHECK_THROWS_AS(Vocabulary::from_lines({"a", "b"}), std::invalid_argument);
  CHECK_THROWS_AS(Vocabulary::from_lines({"<pad>", "<start>", "<end>", "<unk>", "x", "x"}), std::invalid_argument);
  CHECK(Vocabulary::build({{"a", "b", "a"}}, 2).size() == 5);
}

TEST_CASE("encoder output contract") {
  const CaptionModel<float> m(CaptionDims{}, 10, 1);
  std::mt19937_64 rng(2);
  const TF x = uniform<float>({1, 3, 64, 64}, rng, 0, 1);
  const TF a = encode(x, m.enc);
  CHECK(a.shape() == grad::Shape{1, 16, 128});
  for (float v : a.data()) CHECK(std::isfinite(v));
  CHECK(values(encode(x, m.enc)) == values(a));
  const TF pair = encode(grad::concat({x, x}, 0), m.enc);
  CHECK(values(grad::slice(pair, 0, 0, 1)) == values(grad::slice(pair, 0, 1, 1)));
  CHECK(encode(uniform<float>({2, 3, 32, 48}, rng, 0, 1), m.enc).shape() == grad::Shape{2, 16, 128});
  CHECK_THROWS_AS(encode(TF::zeros({1, 3, 31, 64}), m.enc), std::invalid_argument);
  CHECK_THROWS_AS(encode(TF::zeros({1, 1, 64, 64}), m.enc), grad::ShapeError);

  const auto full = CaptionDims::full_scale();
  CHECK(full.L() == 196);
  CHECK(full.D() == 2048);
}

TEST_CASE("encoder parameter names and clone independence") {
  CaptionModel<float> m(CaptionDims{}, 10, 3);
  const auto p = m.parameters();
  CHECK(p.front().first == "cap.enc.conv0.weight");
  CHECK(p.back().first == "cap.dec.out.bias");
  for (const auto& [name, t] : m.buffers()) CHECK(name.starts_with("cap.enc.bn"));
  CaptionModel<float> c = m.clone();
  c.dec.embedding.mutable_data()[0] += 1.0f;
  CHECK(c.dec.embedding.at(0) != m.dec.embedding.at(0));
  const auto e = clone_encoder(m.enc);
  CHECK(values(e.conv[2].weight) == values(m.enc.conv[2].weight));
  CHECK(e.conv[2].weight.data().data() != m.enc.conv[2].weight.data().data());
}

TEST_CASE("attention weights are a simplex and the context stays in the hull") {
  std::mt19937_64 rng(4);
  const CaptionDims d;
  for (int trial = 0; trial < 10; ++trial) {
    const AttentionModel<float> att(d, rng);
    const TF a = uniform<float>({3, d.L(), d.D()}, rng, -2, 2);
    const TF h = uniform<float>({3, d.hidden}, rng, -1, 1);
    const auto [z, alpha] = att.attend(a, h);
    REQUIRE(alpha.shape() == grad::Shape{3, d.L()});
    REQUIRE(z.shape() == grad::Shape{3, d.D()});
    for (int n = 0; n < 3; ++n) {
      double s = 0;
      for (int i = 0; i < d.L(); ++i) {
        const float w = alpha.at(n * d.L() + i);
        CHECK(w >= 0.0f);
        s += w;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
      for (int k = 0; k < d.D(); ++k) {
        float lo = 1e9f, hi = -1e9f;
        for (int i = 0; i < d.L(); ++i) {
          lo = std::min(lo, a.at((n * d.L() + i) * d.D() + k));
          hi = std::max(hi, a.at((n * d.L() + i) * d.D() + k));
        }
        const float zk = z.at(n * d.D() + k);
        CHECK(zk >= lo - 1e-5f);
        CHECK(zk <= hi + 1e-5f);
      }
    }
  }
  CHECK_THROWS_AS(AttentionModel<float>(d, rng).attend(TF::zeros({1, 16, 128}), TF::zeros({1, 5})), grad::ShapeError);
  CHECK_THROWS_AS(AttentionModel<float>(d, rng).attend(TF::zeros({1, 16, 7}), TF::zeros({1, 256})), grad::ShapeError);
}

TEST_CASE("uniform and one-hot attention") {
  std::mt19937_64 rng(5);
  const CaptionDims d = tiny_dims();
  AttentionModel<double> att(d, rng);
  const TD a = uniform<double>({1, d.L(), d.D()}, rng, -1, 1);
  const TD h = uniform<double>({1, d.hidden}, rng, -1, 1);

  for (auto& v : att.score.weight.mutable_data()) v = 0;
  auto [z, alpha] = att.attend(a, h);
  for (int k = 0; k < d.D(); ++k) {
    double mean = 0;
    for (int i = 0; i < d.L(); ++i) mean += a.at(i * d.D() + k) / d.L();
    CHECK(z.at(k) == doctest::Approx(mean).epsilon(1e-12));
  }

  // score depends on feature 0 only, and a_2 carries a huge value there
  TD peaked = a.detach();
  peaked.mutable_data()[static_cast<std::size_t>(2 * d.D())] = 100.0;
  for (auto& v : att.feature_proj.weight.mutable_data()) v = 0;
  for (auto& v : att.feature_proj.bias.mutable_data()) v = 0;
  for (auto& v : att.hidden_proj.weight.mutable_data()) v = 0;
  for (auto& v : att.hidden_proj.bias.mutable_data()) v = 0;
  att.feature_proj.weight.mutable_data()[0] = 10.0;  // [D,k] entry (0,0)
  att.score.weight.mutable_data()[0] = 10.0;
  std::tie(z, alpha) = att.attend(peaked, h);
  CHECK(alpha.at(2) == doctest::Approx(1.0).epsilon(1e-12));
  for (int k = 0; k < d.D(); ++k) CHECK(z.at(k) == doctest::Approx(peaked.at(2 * d.D() + k)).epsilon(1e-9));
}

TEST_CASE("decoder step and initial state") {
  std::mt19937_64 rng(6);
  const CaptionDims d;
  DecoderModel<float> dec(d, 30, rng);
  const TF a = uniform<float>({2, d.L(), d.D()}, rng, 0, 1);
  const auto st = dec.init_state(a);
  CHECK(st.h.shape() == grad::Shape{2, d.hidden});
  CHECK(st.c.shape() == grad::Shape{2, d.hidden});
  CHECK(values(dec.init_state(a).h) == values(st.h));

  const std::vector<int> y{1, 29};
  const TF z = uniform<float>({2, d.D()}, rng, 0, 1);
  const auto [logits, next] = dec.step(y, z, st);
  CHECK(logits.shape() == grad::Shape{2, 30});
  CHECK(next.h.shape() == st.h.shape());
  CHECK(next.c.shape() == st.c.shape());
  const TF p = grad::softmax(logits, 1);
  for (int n = 0; n < 2; ++n) {
    double s = 0;
    for (int v = 0; v < 30; ++v) s += p.at(n * 30 + v);
    CHECK(std::abs(s - 1.0) < 1e-5);
  }
  const std::vector<int> bad{1, 30};
  CHECK_THROWS(dec.step(bad, z, st));
  const std::vector<int> negative{-1, 2};
  CHECK_THROWS(dec.step(negative, z, st));

  for (auto& v : dec.init_h.bias.mutable_data()) v = 0;
  for (auto& v : dec.init_c.bias.mutable_data()) v = 0;
  const auto zero = dec.init_state(TF::zeros({1, d.L(), d.D()}));
  for (float v : zero.h.data()) CHECK(v == 0.0f);
  for (float v : zero.c.data()) CHECK(v == 0.0f);
}

TEST_CASE("teacher forcing batch layout") {
  const std::vector<int> a{1, 5, 6, 2}, b{1, 7, 2};
  const auto batch = make_teacher_batch({&a, &b}, 8, 20);
  CHECK(batch.rows == 2);
  CHECK(batch.steps == 3);
  CHECK(batch.inputs == std::vector<int>{1, 1, 5, 7, 6, 0});
  CHECK(batch.targets == std::vector<int>{5, 7, 6, 2, 2, 0});
  const std::vector<int> no_end{1, 5}, too_big{1, 8, 2};
  CHECK_THROWS_AS(make_teacher_batch({&no_end}, 8, 20), std::invalid_argument);
  CHECK_THROWS_AS(make_teacher_batch({&too_big}, 8, 20), std::out_of_range);
  CHECK_THROWS_AS(make_teacher_batch({&a}, 8, 3), std::length_error);
}

TEST_CASE("joint gradient check through attention and embedding") {
  const CaptionDims d = tiny_dims();
  std::mt19937_64 rng(7);
  AttentionModel<double> att(d, rng);
  DecoderModel<double> dec(d, 9, rng);
  for (auto* lin : {&att.feature_proj, &att.hidden_proj})
    for (auto& v : lin->bias.mutable_data()) v = std::uniform_real_distribution<double>(0.1, 0.4)(rng);
  const TD a = uniform<double>({2, d.L(), d.D()}, rng, -1, 1);
  const std::vector<int> c0{1, 4, 7, 5, 2}, c1{1, 8, 2};
  const auto batch = make_teacher_batch({&c0, &c1}, 9, 20);

  NamedTensors<double> named;
  att.collect("att.", named);
  named.emplace_back("embedding", dec.embedding);
  named.emplace_back("gates_x.weight", dec.gates_x.weight);
  named.emplace_back("out.weight", dec.out.weight);
  auto wrt = grad::tensors_of(named);
  const auto res = grad::check_gradients([&] { return teacher_forced_loss(a, att, dec, batch); }, wrt,
                                         grad::GradCheckOptions{1e-5, 0, 3, 1e-6});
  INFO(res.worst);
  CHECK(res.passed(1e-3));

  // embedding rows never fed as inputs get no gradient
  for (int row : {0, 3, 6})
    for (int k = 0; k < d.embed; ++k) CHECK(dec.embedding.grad()[static_cast<std::size_t>(row * d.embed + k)] == 0.0);
}

TEST_CASE("gradients reach the encoder") {
  const CaptionDims d = tiny_dims();
  CaptionModel<double> m(d, 9, 8);
  std::mt19937_64 rng(9);
  const TD x = uniform<double>({2, 3, 32, 32}, rng, 0, 1);
  const std::vector<int> c0{1, 4, 2}, c1{1, 5, 6, 2};
  const auto batch = make_teacher_batch({&c0, &c1}, 9, 20);
  const TD loss = teacher_forced_loss(m.enc.forward(x, true), m.att, m.dec, batch);
  loss.backward();
  for (const auto& [name, p] : m.parameters()) {
    INFO(name);
    REQUIRE(p.has_grad());
    double s = 0;
    for (double g : p.grad()) s += std::abs(g);
    CHECK(s > 0);
  }
}

TEST_CASE("short training lowers the loss and is reproducible") {
  const Toy t = toy(10, 10);
  CaptionTrainConfig cfg;
  cfg.steps = 50;
  cfg.batch = 10;
  CaptionModel<float> a(CaptionDims{}, t.vocab.size(), 11);
  CaptionModel<float> b(CaptionDims{}, t.vocab.size(), 11);
  const auto ra = train_captioner(t.images, t.samples, a, cfg, 12);
  const auto rb = train_captioner(t.images, t.samples, b, cfg, 12);
  REQUIRE(ra.loss.size() == 50);
  for (double l : ra.loss) CHECK(std::isfinite(l));
  CHECK(ra.loss.back() < ra.loss.front());
  CHECK(ra.loss == rb.loss);
  CHECK(values(a.dec.out.weight) == values(b.dec.out.weight));

  cfg.batch = 3;  // shuffled minibatches
  CaptionModel<float> c(CaptionDims{}, t.vocab.size(), 11);
  const auto rc = train_captioner(t.images, t.samples, c, cfg, 12);
  for (double l : rc.loss) CHECK(std::isfinite(l));

  auto bad = t.samples;
  bad[0].ids = t.vocab.encode(std::vector<std::string>(18, "red"));
  cfg.max_len = 10;
  CHECK_THROWS_AS(train_captioner(t.images, bad, c, cfg, 1), std::length_error);
  bad[0].image_id = 99;
  CHECK_THROWS_AS(train_captioner(t.images, bad, c, cfg, 1), std::out_of_range);
}

TEST_CASE("one pair overfits to an exact argmax chain") {
  const Toy t = toy(1, 13);
  CaptionTrainConfig cfg;
  cfg.steps = 150;
  cfg.batch = 1;
  CaptionModel<float> m(CaptionDims{}, t.vocab.size(), 14);
  train_captioner(t.images, t.samples, m, cfg, 15);
  CHECK(token_accuracy(t.images, t.samples, m) == 1.0);
  const auto expected = t.vocab.encode(tokenize(t.samples[0].text));
  const auto got = caption_greedy(t.images[0], m);
  CHECK(got == std::vector<int>(expected.begin() + 1, expected.end() - 1));
}

TEST_CASE("greedy and beam decoding") {
  const Toy t = toy(8, 16);
  CaptionTrainConfig cfg;
  cfg.steps = 40;
  cfg.batch = 8;
  CaptionModel<float> m(CaptionDims{}, t.vocab.size(), 17);
  train_captioner(t.images, t.samples, m, cfg, 18);
  for (const auto& img : t.images) {
    const TF a = encode(img, m.enc);
    const Decoded g = greedy_decode(a, m.att, m.dec);
    CHECK(g.length <= kMaxCaptionLength);
    CHECK(static_cast<int>(g.tokens.size()) <= kMaxCaptionLength);
    const Decoded g2 = greedy_decode(a, m.att, m.dec);
    CHECK(g2.tokens == g.tokens);
    CHECK(g2.logprob == g.logprob);

    const Decoded rescored = score_sequence(a, m.att, m.dec, g.tokens, g.finished);
    CHECK(std::abs(rescored.logprob - g.logprob) < 1e-9);
    CHECK(rescored.length == g.length);

    const Decoded b1 = beam_decode(a, m.att, m.dec, 1);
    CHECK(b1.tokens == g.tokens);
    CHECK(b1.logprob == g.logprob);
    for (int k : {2, 3, 5}) {
      const Decoded b = beam_decode(a, m.att, m.dec, k);
      CHECK(b.score() >= g.score());
      const Decoded check = score_sequence(a, m.att, m.dec, b.tokens, b.finished);
      CHECK(std::abs(check.score() - b.score()) < 1e-9);
      CHECK(beam_decode(a, m.att, m.dec, k).tokens == b.tokens);
    }
    const Decoded short_run = greedy_decode(a, m.att, m.dec, 3);
    CHECK(short_run.length <= 3);
  }
  CHECK(caption_beam(t.images[0], m, 1) == caption_greedy(t.images[0], m));
  CHECK_THROWS_AS(caption_beam(t.images[0], m, 0), std::invalid_argument);
}
