#include "raincap/caption/captioner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "raincap/grad/adam.hpp"

namespace raincap::caption {

namespace g = raincap::grad;

void CaptionTrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("caption training needs at least one step");
  if (batch < 1) throw std::invalid_argument("caption batch must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("caption learning rate must be positive");
  if (max_len < 2) throw std::invalid_argument("max caption length must allow start and end");
}

TeacherBatch make_teacher_batch(const std::vector<const std::vector<int>*>& captions, int vocab_size, int max_len) {
  if (captions.empty()) throw std::invalid_argument("empty caption batch");
  TeacherBatch b;
  b.rows = static_cast<int>(captions.size());
  for (const auto* ids : captions) {
    const int n = static_cast<int>(ids->size());
    if (n > max_len)
      throw std::length_error("caption of " + std::to_string(n) + " ids exceeds max length " + std::to_string(max_len));
    if (n < 2 || ids->front() != Vocabulary::start || ids->back() != Vocabulary::end)
      throw std::invalid_argument("caption ids must start with <start> and end with <end>");
    for (int id : *ids)
      if (id < 0 || id >= vocab_size) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    b.steps = std::max(b.steps, n - 1);
  }
  b.inputs.assign(static_cast<std::size_t>(b.steps) * b.rows, Vocabulary::pad);
  b.targets.assign(b.inputs.size(), Vocabulary::pad);
  for (int r = 0; r < b.rows; ++r) {
    const auto& ids = *captions[static_cast<std::size_t>(r)];
    for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
      b.inputs[t * b.rows + r] = ids[t];
      b.targets[t * b.rows + r] = ids[t + 1];
    }
  }
  return b;
}

template <class T>
Tensor<T> teacher_forced_logits(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec,
                                const TeacherBatch& batch) {
  if (features.rank() != 3 || features.dim(0) != batch.rows)
    throw g::ShapeError("features " + features.shape().str() + " do not match a batch of " + std::to_string(batch.rows));
  const Tensor<T> proj = att.project(features);
  LstmState<T> st = dec.init_state(features);
  std::vector<Tensor<T>> logits;
  logits.reserve(static_cast<std::size_t>(batch.steps));
  for (int t = 0; t < batch.steps; ++t) {
    const auto z = att.attend(features, proj, st.h).first;
    auto [l, next] = dec.step(std::span<const int>(batch.inputs).subspan(static_cast<std::size_t>(t) * batch.rows,
                                                                         static_cast<std::size_t>(batch.rows)),
                              z, st);
    logits.push_back(std::move(l));
    st = std::move(next);
  }
  return g::concat(std::span<const Tensor<T>>(logits), 0);
}

template <class T>
Tensor<T> teacher_forced_loss(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec,
                              const TeacherBatch& batch) {
  return g::cross_entropy(teacher_forced_logits(features, att, dec, batch), std::span<const int>(batch.targets),
                          Vocabulary::pad);
}

namespace {

void check_samples(const std::vector<rain::Image>& images, const std::vector<CaptionSample>& samples) {
  if (images.empty() || samples.empty()) throw std::invalid_argument("captioning needs images and captions");
  for (const auto& img : images)
    if (!img.same_extent(images.front())) throw std::invalid_argument("caption images must share one size");
  for (const auto& s : samples)
    if (s.image_id < 0 || s.image_id >= static_cast<int>(images.size()))
      throw std::out_of_range("caption refers to missing image " + std::to_string(s.image_id));
}

struct Chunk {
  Tensor<float> images;
  TeacherBatch batch;
};

Chunk gather(const std::vector<rain::Image>& images, const std::vector<CaptionSample>& samples,
             std::span<const std::size_t> which, int vocab_size, int max_len) {
  std::vector<const rain::Image*> imgs;
  std::vector<const std::vector<int>*> caps;
  for (std::size_t i : which) {
    imgs.push_back(&images[static_cast<std::size_t>(samples[i].image_id)]);
    caps.push_back(&samples[i].ids);
  }
  return {rain::stack<float>(imgs), make_teacher_batch(caps, vocab_size, max_len)};
}

template <class T>
std::vector<double> log_probs(const Tensor<T>& logits) {
  const auto d = logits.data();
  const double mx = *std::max_element(d.begin(), d.end());
  double s = 0;
  for (T v : d) s += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = static_cast<double>(d[i]) - lse;
  return out;
}

// first maximum, i.e. lowest id on ties
int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <class T>
void check_single(const Tensor<T>& features) {
  if (features.rank() != 3 || features.dim(0) != 1)
    throw g::ShapeError("decoding expects one feature grid [1,L,D], got " + features.shape().str());
}

}  // namespace

CaptionTrainResult train_captioner(const std::vector<rain::Image>& images, const std::vector<CaptionSample>& samples,
                                   CaptionModel<float>& model, const CaptionTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  check_samples(images, samples);
  const int vocab = model.dec.vocab_size();
  {
    std::vector<const std::vector<int>*> all;
    for (const auto& s : samples) all.push_back(&s.ids);
    make_teacher_batch(all, vocab, cfg.max_len);  // rejects bad captions before any update
  }

  g::Adam<float> opt(g::tensors_of(model.parameters()), g::AdamOptions{cfg.lr});
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bsz = std::min(order.size(), static_cast<std::size_t>(cfg.batch));
  const bool full = bsz == order.size();
  std::size_t cursor = order.size();

  CaptionTrainResult res;
  res.loss.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    std::span<const std::size_t> which(order);
    if (!full) {
      if (cursor + bsz > order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      which = which.subspan(cursor, bsz);
      cursor += bsz;
    }
    const Chunk c = gather(images, samples, which, vocab, cfg.max_len);
    const Tensor<float> feats = model.enc.forward(c.images, true);
    const Tensor<float> loss = teacher_forced_loss(feats, model.att, model.dec, c.batch);
    opt.zero_grad();
    loss.backward();
    opt.step();
    const double l = loss.item();
    if (!std::isfinite(l)) throw std::runtime_error("caption loss diverged at step " + std::to_string(step));
    res.loss.push_back(l);
  }
  return res;
}

double token_accuracy(const std::vector<rain::Image>& images, const std::vector<CaptionSample>& samples,
                      const CaptionModel<float>& model) {
  check_samples(images, samples);
  g::NoGradGuard no_grad;
  const int vocab = model.dec.vocab_size();
  std::size_t hit = 0, total = 0;
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  constexpr std::size_t kChunk = 32;
  for (std::size_t at = 0; at < idx.size(); at += kChunk) {
    const auto which = std::span<const std::size_t>(idx).subspan(at, std::min(kChunk, idx.size() - at));
    const Chunk c = gather(images, samples, which, vocab, kMaxCaptionLength * 4);
    const Tensor<float> logits = teacher_forced_logits(model.enc.forward(c.images), model.att, model.dec, c.batch);
    const auto d = logits.data();
    for (std::size_t r = 0; r < c.batch.targets.size(); ++r) {
      if (c.batch.targets[r] == Vocabulary::pad) continue;
      const auto row = d.subspan(r * static_cast<std::size_t>(vocab), static_cast<std::size_t>(vocab));
      const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      hit += best == c.batch.targets[r];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

template <class T>
Decoded greedy_decode(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec,
                      int max_len) {
  check_single(features);
  g::NoGradGuard no_grad;
  const Tensor<T> proj = att.project(features);
  LstmState<T> st = dec.init_state(features);
  Decoded out;
  int y = Vocabulary::start;
  for (int t = 0; t < max_len; ++t) {
    const auto z = att.attend(features, proj, st.h).first;
    auto [logits, next] = dec.step(std::span<const int>(&y, 1), z, st);
    const auto lp = log_probs(logits);
    const int w = argmax(lp);
    out.logprob += lp[static_cast<std::size_t>(w)];
    ++out.length;
    if (w == Vocabulary::end) {
      out.finished = true;
      break;
    }
    out.tokens.push_back(w);
    y = w;
    st = std::move(next);
  }
  return out;
}

template <class T>
Decoded beam_decode(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec, int k,
                    int max_len) {
  if (k < 1) throw std::invalid_argument("beam width must be at least 1");
  check_single(features);
  std::vector<Decoded> pool{greedy_decode(features, att, dec, max_len)};

  g::NoGradGuard no_grad;
  const Tensor<T> proj = att.project(features);
  struct Hyp {
    std::vector<int> tokens;
    double logprob;
    LstmState<T> st;
  };
  struct Cand {
    double logprob;
    std::size_t parent;
    int token;
  };
  std::vector<Hyp> live{{{}, 0.0, dec.init_state(features)}};
  for (int t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<Cand> cands;
    std::vector<LstmState<T>> next_states;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const Hyp& h = live[p];
      const int y = h.tokens.empty() ? Vocabulary::start : h.tokens.back();
      const auto z = att.attend(features, proj, h.st.h).first;
      auto [logits, next] = dec.step(std::span<const int>(&y, 1), z, h.st);
      next_states.push_back(std::move(next));
      const auto lp = log_probs(logits);
      std::vector<int> ids(lp.size());
      std::iota(ids.begin(), ids.end(), 0);
      const auto top = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(k));
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(top), ids.end(), [&](int a, int b) {
        return lp[a] != lp[b] ? lp[a] > lp[b] : a < b;
      });
      for (std::size_t i = 0; i < top; ++i) cands.push_back({h.logprob + lp[ids[i]], p, ids[i]});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    std::vector<Hyp> next_live;
    for (std::size_t i = 0; i < cands.size() && i < static_cast<std::size_t>(k); ++i) {
      const Cand& c = cands[i];
      std::vector<int> tokens = live[c.parent].tokens;
      if (c.token == Vocabulary::end) {
        pool.push_back({std::move(tokens), c.logprob, static_cast<int>(live[c.parent].tokens.size()) + 1, true});
        continue;
      }
      tokens.push_back(c.token);
      if (t + 1 == max_len) {
        const int len = static_cast<int>(tokens.size());
        pool.push_back({std::move(tokens), c.logprob, len, false});
      } else {
        next_live.push_back({std::move(tokens), c.logprob, next_states[c.parent]});
      }
    }
    live = std::move(next_live);
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i)
    if (pool[i].score() > pool[best].score()) best = i;
  return pool[best];
}

template <class T>
Decoded score_sequence(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec,
                       const std::vector<int>& tokens, bool with_end) {
  check_single(features);
  g::NoGradGuard no_grad;
  const Tensor<T> proj = att.project(features);
  LstmState<T> st = dec.init_state(features);
  std::vector<int> targets = tokens;
  if (with_end) targets.push_back(Vocabulary::end);
  Decoded out{tokens, 0.0, 0, with_end};
  int y = Vocabulary::start;
  for (int w : targets) {
    const auto z = att.attend(features, proj, st.h).first;
    auto [logits, next] = dec.step(std::span<const int>(&y, 1), z, st);
    const auto lp = log_probs(logits);
    if (w < 0 || w >= static_cast<int>(lp.size())) throw std::out_of_range("token id outside vocabulary");
    out.logprob += lp[static_cast<std::size_t>(w)];
    ++out.length;
    y = w;
    st = std::move(next);
  }
  return out;
}

std::vector<int> caption_greedy(const rain::Image& image, const CaptionModel<float>& model, int max_len) {
  return greedy_decode(encode(image, model.enc), model.att, model.dec, max_len).tokens;
}

std::vector<int> caption_beam(const rain::Image& image, const CaptionModel<float>& model, int k, int max_len) {
  return beam_decode(encode(image, model.enc), model.att, model.dec, k, max_len).tokens;
}

#define RAINCAP_INSTANTIATE_DECODE(T)                                                                                \
  template Tensor<T> teacher_forced_logits<T>(const Tensor<T>&, const AttentionModel<T>&, const DecoderModel<T>&,   \
                                              const TeacherBatch&);                                                  \
  template Tensor<T> teacher_forced_loss<T>(const Tensor<T>&, const AttentionModel<T>&, const DecoderModel<T>&,     \
                                            const TeacherBatch&);                                                    \
  template Decoded greedy_decode<T>(const Tensor<T>&, const AttentionModel<T>&, const DecoderModel<T>&, int);       \
  template Decoded beam_decode<T>(const Tensor<T>&, const AttentionModel<T>&, const DecoderModel<T>&, int, int);    \
  template Decoded score_sequence<T>(const Tensor<T>&, const AttentionModel<T>&, const DecoderModel<T>&,            \
                                     const std::vector<int>&, bool);
RAINCAP_INSTANTIATE_DECODE(float)
RAINCAP_INSTANTIATE_DECODE(double)
#undef RAINCAP_INSTANTIATE_DECODE

}  // namespace raincap::caption
