#include "raincap/caption/model.hpp"

#include <stdexcept>

namespace raincap::caption {

namespace g = raincap::grad;

CaptionDims CaptionDims::full_scale() {
  CaptionDims d;
  d.grid = 14;
  d.widths = {256, 512, 1024, 2048};
  d.attention = 512;
  d.hidden = 512;
  d.embed = 512;
  return d;
}

template <class T>
EncoderModel<T>::EncoderModel(const CaptionDims& d, std::mt19937_64& rng) : dims(d) {
  int prev = 3;
  for (int i = 0; i < 4; ++i) {
    conv[i] = g::Conv2d<T>(prev, d.widths[i], 3, 2, 1, rng, false);
    bn[i] = g::BatchNorm2d<T>(d.widths[i]);
    prev = d.widths[i];
  }
}

namespace {

void check_image_batch(const g::Shape& s) {
  if (s.rank() != 4 || s[1] != 3) throw g::ShapeError("encoder expects [N,3,H,W], got " + s.str());
  if (s[2] < 32 || s[3] < 32)
    throw std::invalid_argument("encoder input " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                                " is smaller than 32x32");
}

template <class T>
Tensor<T> to_grid(const Tensor<T>& h, int grid) {
  const Tensor<T> pooled = g::adaptive_avg_pool2d(h, grid, grid);
  const int n = pooled.dim(0), d = pooled.dim(1);
  return g::permute(g::reshape(pooled, g::Shape{n, d, grid * grid}), {0, 2, 1});
}

template <class T>
Tensor<T> uniform_table(int rows, int cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  std::vector<T> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return Tensor<T>::from_data({rows, cols}, std::move(v), true);
}

}  // namespace

template <class T>
Tensor<T> EncoderModel<T>::forward(const Tensor<T>& images, bool training) {
  check_image_batch(images.shape());
  Tensor<T> h = images;
  for (int i = 0; i < 4; ++i) h = g::relu(bn[i].forward(conv[i](h), training));
  return to_grid(h, dims.grid);
}

template <class T>
Tensor<T> EncoderModel<T>::forward(const Tensor<T>& images) const {
  check_image_batch(images.shape());
  Tensor<T> h = images;
  for (int i = 0; i < 4; ++i) h = g::relu(bn[i].forward(conv[i](h)));
  return to_grid(h, dims.grid);
}

template <class T>
void EncoderModel<T>::collect(const std::string& prefix, NamedTensors<T>& params) const {
  for (int i = 0; i < 4; ++i) {
    conv[i].collect(prefix + "conv" + std::to_string(i) + ".", params);
    bn[i].collect(prefix + "bn" + std::to_string(i) + ".", params);
  }
}

template <class T>
void EncoderModel<T>::collect_buffers(const std::string& prefix, NamedTensors<T>& buffers) const {
  for (int i = 0; i < 4; ++i) bn[i].collect_buffers(prefix + "bn" + std::to_string(i) + ".", buffers);
}

template <class T>
AttentionModel<T>::AttentionModel(const CaptionDims& d, std::mt19937_64& rng)
    : feature_proj(d.D(), d.attention, rng), hidden_proj(d.hidden, d.attention, rng), score(d.attention, 1, rng, false) {}

template <class T>
Tensor<T> AttentionModel<T>::project(const Tensor<T>& a) const {
  if (a.rank() != 3 || a.dim(2) != feature_proj.in_features())
    throw g::ShapeError("attention expects features [N,L," + std::to_string(feature_proj.in_features()) + "], got " +
                        a.shape().str());
  const int n = a.dim(0), l = a.dim(1);
  return g::reshape(feature_proj(g::reshape(a, g::Shape{n * l, a.dim(2)})), g::Shape{n, l, feature_proj.out_features()});
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> AttentionModel<T>::attend(const Tensor<T>& a, const Tensor<T>& projected,
                                                          const Tensor<T>& h) const {
  const int n = a.dim(0), l = a.dim(1), k = feature_proj.out_features();
  if (h.rank() != 2 || h.dim(0) != n || h.dim(1) != hidden_proj.in_features())
    throw g::ShapeError("attention hidden state " + h.shape().str() + " does not match features " + a.shape().str());
  const Tensor<T> hp = g::reshape(hidden_proj(h), g::Shape{n, 1, k});
  const Tensor<T> e = g::relu(g::add(projected, hp));
  const Tensor<T> scores = g::reshape(score(g::reshape(e, g::Shape{n * l, k})), g::Shape{n, l});
  const Tensor<T> alpha = g::softmax(scores, 1);
  const Tensor<T> z = g::reshape(g::bmm(g::reshape(alpha, g::Shape{n, 1, l}), a), g::Shape{n, a.dim(2)});
  return {z, alpha};
}

template <class T>
void AttentionModel<T>::collect(const std::string& prefix, NamedTensors<T>& params) const {
  feature_proj.collect(prefix + "feature_proj.", params);
  hidden_proj.collect(prefix + "hidden_proj.", params);
  score.collect(prefix + "score.", params);
}

template <class T>
DecoderModel<T>::DecoderModel(const CaptionDims& d, int vocab_size, std::mt19937_64& rng) {
  if (vocab_size <= Vocabulary::num_specials) throw std::invalid_argument("decoder needs a vocabulary beyond the specials");
  embedding = uniform_table<T>(vocab_size, d.embed, 0.1, rng);
  gates_x = g::Linear<T>(d.embed + d.D(), 4 * d.hidden, rng);
  gates_h = g::Linear<T>(d.hidden, 4 * d.hidden, rng, false);
  init_h = g::Linear<T>(d.D(), d.hidden, rng);
  init_c = g::Linear<T>(d.D(), d.hidden, rng);
  out_h = g::Linear<T>(d.hidden, d.embed, rng);
  out_z = g::Linear<T>(d.D(), d.embed, rng);
  out = g::Linear<T>(d.embed, vocab_size, rng);
  // forget gates start open
  auto b = gates_x.bias.mutable_data();
  for (int i = d.hidden; i < 2 * d.hidden; ++i) b[static_cast<std::size_t>(i)] = T(1);
}

template <class T>
LstmState<T> DecoderModel<T>::init_state(const Tensor<T>& a) const {
  if (a.rank() != 3) throw g::ShapeError("init_state expects features [N,L,D], got " + a.shape().str());
  const Tensor<T> m = g::mean_axis(a, 1);
  return {g::tanh(init_h(m)), g::tanh(init_c(m))};
}

template <class T>
std::pair<Tensor<T>, LstmState<T>> DecoderModel<T>::step(std::span<const int> y_prev, const Tensor<T>& z,
                                                         const LstmState<T>& state) const {
  const int hsz = hidden_size();
  const Tensor<T> e = g::embedding(embedding, y_prev);
  const Tensor<T> gates = g::add(gates_x(g::concat({e, z}, 1)), gates_h(state.h));
  const Tensor<T> i = g::sigmoid(g::slice(gates, 1, 0, hsz));
  const Tensor<T> f = g::sigmoid(g::slice(gates, 1, hsz, hsz));
  const Tensor<T> cand = g::tanh(g::slice(gates, 1, 2 * hsz, hsz));
  const Tensor<T> o = g::sigmoid(g::slice(gates, 1, 3 * hsz, hsz));
  LstmState<T> next;
  next.c = g::add(g::mul(f, state.c), g::mul(i, cand));
  next.h = g::mul(o, g::tanh(next.c));
  const Tensor<T> logits = out(g::add(g::add(e, out_h(next.h)), out_z(z)));
  return {logits, next};
}

template <class T>
void DecoderModel<T>::collect(const std::string& prefix, NamedTensors<T>& params) const {
  params.emplace_back(prefix + "embedding", embedding);
  gates_x.collect(prefix + "gates_x.", params);
  gates_h.collect(prefix + "gates_h.", params);
  init_h.collect(prefix + "init_h.", params);
  init_c.collect(prefix + "init_c.", params);
  out_h.collect(prefix + "out_h.", params);
  out_z.collect(prefix + "out_z.", params);
  out.collect(prefix + "out.", params);
}

template <class T>
CaptionModel<T>::CaptionModel(const CaptionDims& d, int vocab_size, std::uint64_t seed) : dims(d) {
  std::mt19937_64 rng(seed);
  enc = EncoderModel<T>(d, rng);
  att = AttentionModel<T>(d, rng);
  dec = DecoderModel<T>(d, vocab_size, rng);
}

template <class T>
NamedTensors<T> CaptionModel<T>::parameters() const {
  NamedTensors<T> p;
  enc.collect("cap.enc.", p);
  att.collect("cap.att.", p);
  dec.collect("cap.dec.", p);
  return p;
}

template <class T>
NamedTensors<T> CaptionModel<T>::decoder_parameters() const {
  NamedTensors<T> p;
  att.collect("cap.att.", p);
  dec.collect("cap.dec.", p);
  return p;
}

template <class T>
NamedTensors<T> CaptionModel<T>::buffers() const {
  NamedTensors<T> b;
  enc.collect_buffers("cap.enc.", b);
  return b;
}

template <class T>
NamedTensors<T> CaptionModel<T>::state() const {
  NamedTensors<T> s = parameters();
  for (auto& e : buffers()) s.push_back(std::move(e));
  return s;
}

template <class T>
CaptionModel<T> CaptionModel<T>::clone() const {
  CaptionModel<T> c(dims, dec.vocab_size(), 0);
  NamedTensors<T> dst = c.state();
  g::copy_values(state(), dst);
  return c;
}

template <class T>
NamedTensors<T> encoder_state(const EncoderModel<T>& enc, const std::string& prefix) {
  NamedTensors<T> s;
  enc.collect(prefix, s);
  enc.collect_buffers(prefix, s);
  return s;
}

template <class T>
EncoderModel<T> clone_encoder(const EncoderModel<T>& enc) {
  std::mt19937_64 rng(0);
  EncoderModel<T> c(enc.dims, rng);
  NamedTensors<T> dst = encoder_state(c, "");
  g::copy_values(encoder_state(enc, ""), dst);
  return c;
}

template <class T>
Tensor<T> encode(const Tensor<T>& images, const EncoderModel<T>& enc) {
  return enc.forward(images);
}

template struct EncoderModel<float>;
template struct EncoderModel<double>;
template struct AttentionModel<float>;
template struct AttentionModel<double>;
template struct DecoderModel<float>;
template struct DecoderModel<double>;
template struct CaptionModel<float>;
template struct CaptionModel<double>;

#define RAINCAP_INSTANTIATE_CAPTION(T)                                                     \
  template NamedTensors<T> encoder_state<T>(const EncoderModel<T>&, const std::string&); \
  template EncoderModel<T> clone_encoder<T>(const EncoderModel<T>&);                     \
  template Tensor<T> encode<T>(const Tensor<T>&, const EncoderModel<T>&);
RAINCAP_INSTANTIATE_CAPTION(float)
RAINCAP_INSTANTIATE_CAPTION(double)
#undef RAINCAP_INSTANTIATE_CAPTION

}  // namespace raincap::caption
