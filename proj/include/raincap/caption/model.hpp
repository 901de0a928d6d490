#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "raincap/caption/vocab.hpp"
#include "raincap/grad/nn.hpp"
#include "raincap/rain/image.hpp"

namespace raincap::caption {

using grad::NamedTensors;
using grad::Tensor;

struct CaptionDims {
  int grid = 4;       // features on a grid x grid lattice, L = grid^2
  int attention = 64; // k
  int hidden = 256;   // H
  int embed = 64;     // m
  std::array<int, 4> widths{16, 32, 64, 128};  // encoder trunk; D = widths[3]

  int L() const { return grid * grid; }
  int D() const { return widths[3]; }
  bool operator==(const CaptionDims&) const = default;

  /// 14x14x2048 features as produced by a resnet-152 trunk. Documented only.
  static CaptionDims full_scale();
};

/// Stride-2 conv + batch norm + relu blocks, then adaptive average pooling.
/// Output is the feature grid [N, L, D].
template <class T>
struct EncoderModel {
  std::array<grad::Conv2d<T>, 4> conv;
  std::array<grad::BatchNorm2d<T>, 4> bn;
  CaptionDims dims;

  EncoderModel() = default;
  EncoderModel(const CaptionDims& dims, std::mt19937_64& rng);

  /// Training mode uses batch statistics and updates the running ones.
  Tensor<T> forward(const Tensor<T>& images, bool training);
  /// Evaluation with running statistics; never mutates the model.
  Tensor<T> forward(const Tensor<T>& images) const;

  void collect(const std::string& prefix, NamedTensors<T>& params) const;
  void collect_buffers(const std::string& prefix, NamedTensors<T>& buffers) const;
};

template <class T>
struct AttentionModel {
  grad::Linear<T> feature_proj;  // D -> k
  grad::Linear<T> hidden_proj;   // H -> k
  grad::Linear<T> score;         // k -> 1, no bias

  AttentionModel() = default;
  AttentionModel(const CaptionDims& dims, std::mt19937_64& rng);

  /// Feature projection, reused across decoding steps: [N, L, k].
  Tensor<T> project(const Tensor<T>& a) const;
  /// (context [N, D], weights [N, L]).
  std::pair<Tensor<T>, Tensor<T>> attend(const Tensor<T>& a, const Tensor<T>& projected, const Tensor<T>& h) const;
  std::pair<Tensor<T>, Tensor<T>> attend(const Tensor<T>& a, const Tensor<T>& h) const {
    return attend(a, project(a), h);
  }

  void collect(const std::string& prefix, NamedTensors<T>& params) const;
};

template <class T>
struct LstmState {
  Tensor<T> h;  // [N, H]
  Tensor<T> c;  // [N, H]
};

template <class T>
struct DecoderModel {
  Tensor<T> embedding;       // [V, m]
  grad::Linear<T> gates_x;   // m + D -> 4H
  grad::Linear<T> gates_h;   // H -> 4H, no bias
  grad::Linear<T> init_h;    // D -> H
  grad::Linear<T> init_c;    // D -> H
  grad::Linear<T> out_h;     // H -> m
  grad::Linear<T> out_z;     // D -> m
  grad::Linear<T> out;       // m -> V

  DecoderModel() = default;
  DecoderModel(const CaptionDims& dims, int vocab_size, std::mt19937_64& rng);

  int vocab_size() const { return embedding.dim(0); }
  int hidden_size() const { return gates_h.in_features(); }

  /// h0, c0 = tanh(linear(mean feature)).
  LstmState<T> init_state(const Tensor<T>& a) const;
  /// LSTM on concat(E y, z); logits = out(E y + out_h(h_t) + out_z(z)).
  std::pair<Tensor<T>, LstmState<T>> step(std::span<const int> y_prev, const Tensor<T>& z, const LstmState<T>& state) const;

  void collect(const std::string& prefix, NamedTensors<T>& params) const;
};

template <class T>
struct CaptionModel {
  CaptionDims dims;
  EncoderModel<T> enc;
  AttentionModel<T> att;
  DecoderModel<T> dec;

  CaptionModel() = default;
  CaptionModel(const CaptionDims& dims, int vocab_size, std::uint64_t seed);

  /// "cap.enc.*", "cap.att.*", "cap.dec.*".
  NamedTensors<T> parameters() const;
  NamedTensors<T> decoder_parameters() const;  // attention and decoder only
  /// Batch-norm running statistics, "cap.enc.*".
  NamedTensors<T> buffers() const;
  /// Parameters followed by buffers.
  NamedTensors<T> state() const;

  /// Independent copy; no tensor is shared with the original.
  CaptionModel clone() const;
};

/// Independent copy of an encoder.
template <class T>
EncoderModel<T> clone_encoder(const EncoderModel<T>& enc);

/// Encoder parameters followed by buffers under `prefix`.
template <class T>
NamedTensors<T> encoder_state(const EncoderModel<T>& enc, const std::string& prefix);

/// Images -> feature grid with the encoder in evaluation mode.
/// Throws std::invalid_argument for inputs smaller than 32x32.
template <class T>
Tensor<T> encode(const Tensor<T>& images, const EncoderModel<T>& enc);

template <class T>
Tensor<T> encode(const rain::Image& image, const EncoderModel<T>& enc) {
  return encode(rain::to_tensor<T>(image), enc);
}

extern template struct EncoderModel<float>;
extern template struct EncoderModel<double>;
extern template struct AttentionModel<float>;
extern template struct AttentionModel<double>;
extern template struct DecoderModel<float>;
extern template struct DecoderModel<double>;
extern template struct CaptionModel<float>;
extern template struct CaptionModel<double>;

}  // namespace raincap::caption
