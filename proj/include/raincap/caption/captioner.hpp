#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "raincap/caption/model.hpp"
#include "raincap/caption/vocab.hpp"
#include "raincap/rain/image.hpp"

namespace raincap::caption {

struct CaptionTrainConfig {
  int steps = 1500;
  int batch = 20;  // caption pairs per step
  double lr = 1e-3;
  int max_len = kMaxCaptionLength;

  void validate() const;
};

struct CaptionTrainResult {
  std::vector<double> loss;  // one entry per step
};

/// Padded teacher-forcing batch: inputs are ids[0..n-2], targets ids[1..n-1].
struct TeacherBatch {
  int rows = 0;
  int steps = 0;                // decoding steps (longest caption - 1)
  std::vector<int> inputs;      // [steps][rows], pad beyond each caption
  std::vector<int> targets;     // [steps][rows], pad beyond each caption
};

TeacherBatch make_teacher_batch(const std::vector<const std::vector<int>*>& captions, int vocab_size, int max_len);

/// Mean cross-entropy over non-pad targets, feeding the ground-truth previous
/// token at every step. `features` is [rows, L, D].
template <class T>
Tensor<T> teacher_forced_loss(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec,
                              const TeacherBatch& batch);

/// Logits of every step stacked step-major: [steps * rows, V].
template <class T>
Tensor<T> teacher_forced_logits(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec,
                                const TeacherBatch& batch);

/// Joint Adam training of encoder, attention and decoder. `samples[i].image_id`
/// indexes `images`. Throws std::length_error for captions above max_len.
CaptionTrainResult train_captioner(const std::vector<rain::Image>& images, const std::vector<CaptionSample>& samples,
                                   CaptionModel<float>& model, const CaptionTrainConfig& cfg, std::uint64_t seed);

/// Fraction of non-pad target positions whose argmax matches, teacher forced,
/// encoder in evaluation mode.
double token_accuracy(const std::vector<rain::Image>& images, const std::vector<CaptionSample>& samples,
                      const CaptionModel<float>& model);

struct Decoded {
  std::vector<int> tokens;  // no specials
  double logprob = 0;       // sum over scored positions, end included when emitted
  int length = 0;           // scored positions
  bool finished = false;    // end emitted

  double score() const { return length > 0 ? logprob / length : 0.0; }
};

/// Argmax chain from the start id; stops at end or after max_len steps.
/// `features` is a single grid [1, L, D].
template <class T>
Decoded greedy_decode(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec,
                      int max_len = kMaxCaptionLength);

/// Length-normalised beam search. Ties go to the lower token id, then to
/// the older hypothesis. The greedy chain is part of the final pool.
template <class T>
Decoded beam_decode(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec, int k,
                    int max_len = kMaxCaptionLength);

/// Log-probability of `tokens` (followed by end when `with_end`).
template <class T>
Decoded score_sequence(const Tensor<T>& features, const AttentionModel<T>& att, const DecoderModel<T>& dec,
                       const std::vector<int>& tokens, bool with_end);

std::vector<int> caption_greedy(const rain::Image& image, const CaptionModel<float>& model,
                                int max_len = kMaxCaptionLength);
std::vector<int> caption_beam(const rain::Image& image, const CaptionModel<float>& model, int k,
                              int max_len = kMaxCaptionLength);

}  // namespace raincap::caption
