#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wz/nn.hpp"
#include "wz/rng.hpp"
#include "wz/spacetime.hpp"

// The predictor: a two-branch encoder (convolutional over the space-time
// image, dense over the work-zone descriptor), token self-attention over the
// fused feature vector, a deconvolutional speed-image decoder, and a softmax
// incident head. Disabling attention turns the fusion stage into the plain
// concatenation, which is the ablated variant; the two share parameter
// shapes and checkpoints.
//
// Numerics live in nn.hpp; this header only composes them, so every backward
// path here is covered by the end-to-end finite-difference test.

namespace wz {

struct ModelConfig {
  int canvas_h = 16;
  int canvas_w = 96;
  int in_channels = 4;
  int conv1_filters = 16;
  int conv2_filters = 32;
  int kernel = 3;
  int tab_features = 8;
  int tab_hidden = 32;
  int d_model = 32;
  int incident_hidden = 64;
  bool attention_enabled = true;

  int pooled_h() const { return canvas_h / 4; }
  int pooled_w() const { return canvas_w / 4; }
  int image_feature_len() const { return pooled_h() * pooled_w() * conv2_filters; }
  int fused_len() const { return image_feature_len() + tab_hidden; }
  int token_count() const { return fused_len() / d_model; }
  int conv_padding() const { return (kernel - 1) / 2; }

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    if (canvas_h <= 0 || canvas_w <= 0 || canvas_h % 4 != 0 || canvas_w % 4 != 0)
      throw config_error("model canvas must have positive extents divisible by 4, got " +
                         std::to_string(canvas_h) + "x" + std::to_string(canvas_w));
    if (in_channels <= 0 || conv1_filters <= 0 || conv2_filters <= 0)
      throw config_error("model channel counts must be positive");
    if (kernel <= 0 || kernel % 2 == 0)
      throw config_error("conv kernel must be odd so padding preserves the extent, got " +
                         std::to_string(kernel));
    if (tab_features <= 0 || tab_hidden <= 0 || incident_hidden <= 0)
      throw config_error("dense layer widths must be positive");
    if (d_model <= 0 || fused_len() % d_model != 0)
      throw config_error("fused feature length " + std::to_string(fused_len()) +
                         " must divide into tokens of width " + std::to_string(d_model));
  }
};

template <typename S>
struct ModelParams;

template <typename S>
ModelParams<S> make_model_params(const ModelConfig& cfg);

template <typename S>
struct ModelParams {
  ModelConfig config;
  Tensor<S> conv1_k, conv1_b;
  Tensor<S> conv2_k, conv2_b;
  Tensor<S> tab_w, tab_b;
  AttentionParams<S> attn;
  Tensor<S> dec_w, dec_b;
  Tensor<S> deconv1_k, deconv1_b;
  Tensor<S> deconv2_k, deconv2_b;
  Tensor<S> inc1_w, inc1_b;
  Tensor<S> inc2_w, inc2_b;

  // The one serialization/update order. Checkpoints, Adam state and gradient
  // containers all index parameters by this sequence.
  std::vector<std::pair<std::string, Tensor<S>*>> entries() {
    return {{"conv1_kernels", &conv1_k},   {"conv1_bias", &conv1_b},
            {"conv2_kernels", &conv2_k},   {"conv2_bias", &conv2_b},
            {"tabular_weights", &tab_w},   {"tabular_bias", &tab_b},
            {"attention_wq", &attn.wq},    {"attention_wk", &attn.wk},
            {"attention_wv", &attn.wv},    {"decoder_weights", &dec_w},
            {"decoder_bias", &dec_b},      {"deconv1_kernels", &deconv1_k},
            {"deconv1_bias", &deconv1_b},  {"deconv2_kernels", &deconv2_k},
            {"deconv2_bias", &deconv2_b},  {"incident1_weights", &inc1_w},
            {"incident1_bias", &inc1_b},   {"incident2_weights", &inc2_w},
            {"incident2_bias", &inc2_b}};
  }
  std::vector<std::pair<std::string, const Tensor<S>*>> entries() const {
    auto mutable_entries = const_cast<ModelParams*>(this)->entries();
    std::vector<std::pair<std::string, const Tensor<S>*>> out;
    out.reserve(mutable_entries.size());
    for (auto& [name, t] : mutable_entries) out.emplace_back(name, t);
    return out;
  }

  long parameter_count() const {
    long n = 0;
    for (const auto& [name, t] : entries()) n += t->size();
    return n;
  }

  template <typename T>
  ModelParams<T> cast() const {
    ModelParams<T> out = make_model_params<T>(config);
    auto src = entries();
    auto dst = out.entries();
    for (std::size_t i = 0; i < src.size(); ++i)
      *dst[i].second = src[i].second->template cast<T>();
    return out;
  }
};

template <typename S>
ModelParams<S> make_model_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<S> p;
  p.config = cfg;
  const int k = cfg.kernel;
  p.conv1_k = Tensor<S>({k, k, cfg.in_channels, cfg.conv1_filters});
  p.conv1_b = Tensor<S>({cfg.conv1_filters});
  p.conv2_k = Tensor<S>({k, k, cfg.conv1_filters, cfg.conv2_filters});
  p.conv2_b = Tensor<S>({cfg.conv2_filters});
  p.tab_w = Tensor<S>({cfg.tab_features, cfg.tab_hidden});
  p.tab_b = Tensor<S>({cfg.tab_hidden});
  p.attn.wq = Tensor<S>({cfg.d_model, cfg.d_model});
  p.attn.wk = Tensor<S>({cfg.d_model, cfg.d_model});
  p.attn.wv = Tensor<S>({cfg.d_model, cfg.d_model});
  p.dec_w = Tensor<S>({cfg.fused_len(), cfg.image_feature_len()});
  p.dec_b = Tensor<S>({cfg.image_feature_len()});
  p.deconv1_k = Tensor<S>({2, 2, cfg.conv1_filters, cfg.conv2_filters});
  p.deconv1_b = Tensor<S>({cfg.conv1_filters});
  p.deconv2_k = Tensor<S>({2, 2, 1, cfg.conv1_filters});
  p.deconv2_b = Tensor<S>({1});
  p.inc1_w = Tensor<S>({cfg.fused_len(), cfg.incident_hidden});
  p.inc1_b = Tensor<S>({cfg.incident_hidden});
  p.inc2_w = Tensor<S>({cfg.incident_hidden, 2});
  p.inc2_b = Tensor<S>({2});
  return p;
}

namespace detail {

// Fan counts for uniform Glorot limits. Kernels [K,K,A,B] serve conv (A->B)
// and deconv (B->A) symmetrically, so the sum fan_in+fan_out is the same
// either way.
inline std::pair<long, long> fan_in_out(const Shape& shape) {
  if (shape.size() == 2) return {shape[0], shape[1]};
  if (shape.size() == 4) {
    const long window = static_cast<long>(shape[0]) * shape[1];
    return {window * shape[2], window * shape[3]};
  }
  return {1, static_cast<long>(shape_size(shape))};
}

}  // namespace detail

// Glorot-uniform weights, zero biases. Each tensor draws from its own stream
// keyed by position in entries(), so adding parameters later cannot silently
// reshuffle earlier initializations.
inline constexpr std::uint64_t kInitStreamBase = 0x4000;

template <typename S>
ModelParams<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<S> p = make_model_params<S>(cfg);
  auto entries = p.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<S>& t = *entries[i].second;
    if (t.rank() < 2) continue;  // biases stay zero
    const auto [fan_in, fan_out] = detail::fan_in_out(t.shape());
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    SplitMix64 rng = seeded_rng(seed, kInitStreamBase + i);
    for (long j = 0; j < t.size(); ++j) t[j] = static_cast<S>(rng.uniform(-limit, limit));
  }
  return p;
}

template <typename S>
struct ModelCache {
  Tensor<S> x;  // masked input image
  Tensor<S> conv1_pre, relu1;
  MaxPool2Result<S> pool1;
  Tensor<S> conv2_pre, relu2;
  MaxPool2Result<S> pool2;
  Tensor<S> img_feat;
  Tensor<S> tab_in, tab_pre, tab_feat;
  Tensor<S> fused;
  AttentionCache<S> attn;
  Tensor<S> attended;
  Tensor<S> dec_pre, deconv_in;
  Tensor<S> d1_pre, d1_relu;
  Tensor<S> d2_pre;
  Tensor<S> y;  // [h, w], sigmoid output
  Tensor<S> inc1_pre, inc1_relu;
  Tensor<S> logits, p;
};

template <typename S>
struct PredictionOutput {
  Tensor<S> y_speed;     // [h, w] normalized
  Tensor<S> p_incident;  // [2] on the simplex
  double incident_probability() const { return static_cast<double>(p_incident[1]); }
};

// conv(relu, pool) twice, then flatten. Padding keeps the spatial extent so
// two pools take H x W to H/4 x W/4 exactly.
template <typename S>
Tensor<S> encode_image(const Tensor<S>& x, const ModelParams<S>& params, ModelCache<S>& cache) {
  const ModelConfig& cfg = params.config;
  require_shape(x, {cfg.canvas_h, cfg.canvas_w, cfg.in_channels}, "encode_image input");
  const int pad = cfg.conv_padding();
  cache.conv1_pre = conv2d_forward(x, params.conv1_k, params.conv1_b, 1, pad);
  cache.relu1 = relu_forward(cache.conv1_pre);
  cache.pool1 = maxpool2_forward(cache.relu1);
  cache.conv2_pre = conv2d_forward(cache.pool1.output, params.conv2_k, params.conv2_b, 1, pad);
  cache.relu2 = relu_forward(cache.conv2_pre);
  cache.pool2 = maxpool2_forward(cache.relu2);
  cache.img_feat = cache.pool2.output.reshaped({cfg.image_feature_len()});
  return cache.img_feat;
}

template <typename S>
Tensor<S> encode_tabular(const Tensor<S>& features, const ModelParams<S>& params,
                         ModelCache<S>& cache) {
  require_shape(features, {params.config.tab_features}, "encode_tabular input");
  cache.tab_in = features;
  cache.tab_pre = dense_forward(features, params.tab_w, params.tab_b);
  cache.tab_feat = relu_forward(cache.tab_pre);
  return cache.tab_feat;
}

// Concatenate (image first, tabular last), view as tokens of width d_model,
// attend across tokens, and flatten back. With attention disabled the
// concatenation passes through untouched.
template <typename S>
Tensor<S> fuse_and_attend(const Tensor<S>& img_feat, const Tensor<S>& tab_feat,
                          const ModelParams<S>& params, ModelCache<S>& cache) {
  const ModelConfig& cfg = params.config;
  require_shape(img_feat, {cfg.image_feature_len()}, "fuse_and_attend image features");
  require_shape(tab_feat, {cfg.tab_hidden}, "fuse_and_attend tabular features");
  cache.fused = Tensor<S>({cfg.fused_len()});
  std::copy(img_feat.data(), img_feat.data() + img_feat.size(), cache.fused.data());
  std::copy(tab_feat.data(), tab_feat.data() + tab_feat.size(),
            cache.fused.data() + img_feat.size());
  if (!cfg.attention_enabled) {
    cache.attended = cache.fused;
    return cache.attended;
  }
  const Tensor<S> tokens = cache.fused.reshaped({cfg.token_count(), cfg.d_model});
  Tensor<S> z = self_attention_forward(tokens, params.attn, &cache.attn);
  cache.attended = z.reshaped({cfg.fused_len()});
  return cache.attended;
}

template <typename S>
Tensor<S> decode_speed(const Tensor<S>& z, const ModelParams<S>& params, ModelCache<S>& cache) {
  const ModelConfig& cfg = params.config;
  require_shape(z, {cfg.fused_len()}, "decode_speed input");
  cache.dec_pre = dense_forward(z, params.dec_w, params.dec_b);
  cache.deconv_in = cache.dec_pre.reshaped({cfg.pooled_h(), cfg.pooled_w(), cfg.conv2_filters});
  cache.d1_pre = deconv2d_forward(cache.deconv_in, params.deconv1_k, params.deconv1_b, 2);
  cache.d1_relu = relu_forward(cache.d1_pre);
  cache.d2_pre = deconv2d_forward(cache.d1_relu, params.deconv2_k, params.deconv2_b, 2);
  cache.y = sigmoid_forward(cache.d2_pre).reshaped({cfg.canvas_h, cfg.canvas_w});
  return cache.y;
}

template <typename S>
Tensor<S> decode_incident(const Tensor<S>& z, const ModelParams<S>& params, ModelCache<S>& cache) {
  require_shape(z, {params.config.fused_len()}, "decode_incident input");
  cache.inc1_pre = dense_forward(z, params.inc1_w, params.inc1_b);
  cache.inc1_relu = relu_forward(cache.inc1_pre);
  cache.logits = dense_forward(cache.inc1_relu, params.inc2_w, params.inc2_b);
  cache.p = softmax_forward(cache.logits, 0);
  return cache.p;
}

// Padding cells are zeroed before the encoder, so nothing outside the mask
// can influence the outputs.
template <typename S>
Tensor<S> apply_input_mask(const Tensor<S>& image, const Tensor<S>& mask) {
  require_rank(image, 3, "apply_input_mask image");
  if (mask.size() == 0) return image;
  require_shape(mask, {image.dim(0), image.dim(1)}, "apply_input_mask mask");
  Tensor<S> out(image.shape());
  const int c = image.dim(2);
  for (long cell = 0; cell < mask.size(); ++cell) {
    const S m = mask[cell];
    for (int ch = 0; ch < c; ++ch) out[cell * c + ch] = image[cell * c + ch] * m;
  }
  return out;
}

template <typename S>
PredictionOutput<S> model_forward(const Tensor<S>& image, const Tensor<S>& mask,
                                  const Tensor<S>& features, const ModelParams<S>& params,
                                  ModelCache<S>* cache = nullptr) {
  ModelCache<S> local;
  ModelCache<S>& c = cache ? *cache : local;
  c.x = apply_input_mask(image, mask);
  const Tensor<S> img_feat = encode_image(c.x, params, c);
  const Tensor<S> tab_feat = encode_tabular(features, params, c);
  const Tensor<S> z = fuse_and_attend(img_feat, tab_feat, params, c);
  PredictionOutput<S> out;
  out.y_speed = decode_speed(z, params, c);
  out.p_incident = decode_incident(z, params, c);
  return out;
}

template <typename S>
PredictionOutput<S> model_forward(const Sample<S>& s, const ModelParams<S>& params,
                                  ModelCache<S>* cache = nullptr) {
  return model_forward(s.image.data, s.image.mask, s.features, params, cache);
}

// Gradients w.r.t. every parameter, given upstream gradients on the speed
// output (post-sigmoid) and the incident logits (pre-softmax; pair with
// softmax_cross_entropy_logit_grad). Input gradients stop at the image.
template <typename S>
ModelParams<S> model_backward(const ModelParams<S>& params, const ModelCache<S>& cache,
                              const Tensor<S>& dy, const Tensor<S>& dlogits) {
  const ModelConfig& cfg = params.config;
  require_shape(dy, {cfg.canvas_h, cfg.canvas_w}, "model_backward speed gradient");
  require_shape(dlogits, {2}, "model_backward incident gradient");
  ModelParams<S> g = make_model_params<S>(cfg);

  // speed head: sigmoid, deconv2, relu, deconv1, dense
  const Tensor<S> dy3 = dy.reshaped({cfg.canvas_h, cfg.canvas_w, 1});
  const Tensor<S> y3 = cache.y.reshaped({cfg.canvas_h, cfg.canvas_w, 1});
  const Tensor<S> dd2 = sigmoid_backward(dy3, y3);
  auto g2 = deconv2d_backward(dd2, cache.d1_relu, params.deconv2_k, 2);
  g.deconv2_k = std::move(g2.kernels);
  g.deconv2_b = std::move(g2.bias);
  const Tensor<S> dd1 = relu_backward(g2.input, cache.d1_pre);
  auto g1 = deconv2d_backward(dd1, cache.deconv_in, params.deconv1_k, 2);
  g.deconv1_k = std::move(g1.kernels);
  g.deconv1_b = std::move(g1.bias);
  const Tensor<S> ddec = g1.input.reshaped({cfg.image_feature_len()});
  auto gd = dense_backward(ddec, cache.attended, params.dec_w);
  g.dec_w = std::move(gd.weights);
  g.dec_b = std::move(gd.bias);

  // incident head: dense, relu, dense
  auto gi2 = dense_backward(dlogits, cache.inc1_relu, params.inc2_w);
  g.inc2_w = std::move(gi2.weights);
  g.inc2_b = std::move(gi2.bias);
  const Tensor<S> di1 = relu_backward(gi2.input, cache.inc1_pre);
  auto gi1 = dense_backward(di1, cache.attended, params.inc1_w);
  g.inc1_w = std::move(gi1.weights);
  g.inc1_b = std::move(gi1.bias);

  // both heads feed the fused vector
  Tensor<S> dz({cfg.fused_len()});
  for (long i = 0; i < dz.size(); ++i) dz[i] = gd.input[i] + gi1.input[i];

  Tensor<S> dfused;
  if (cfg.attention_enabled) {
    const Tensor<S> tokens = cache.fused.reshaped({cfg.token_count(), cfg.d_model});
    auto ga = self_attention_backward(dz.reshaped({cfg.token_count(), cfg.d_model}), tokens,
                                      params.attn, cache.attn);
    g.attn.wq = std::move(ga.wq);
    g.attn.wk = std::move(ga.wk);
    g.attn.wv = std::move(ga.wv);
    dfused = ga.tokens.reshaped({cfg.fused_len()});
  } else {
    dfused = std::move(dz);
  }

  // split the concatenation
  Tensor<S> dimg({cfg.image_feature_len()});
  Tensor<S> dtab({cfg.tab_hidden});
  std::copy(dfused.data(), dfused.data() + dimg.size(), dimg.data());
  std::copy(dfused.data() + dimg.size(), dfused.data() + dfused.size(), dtab.data());

  // tabular branch
  const Tensor<S> dtab_pre = relu_backward(dtab, cache.tab_pre);
  auto gt = dense_backward(dtab_pre, cache.tab_in, params.tab_w);
  g.tab_w = std::move(gt.weights);
  g.tab_b = std::move(gt.bias);

  // image branch
  const int pad = cfg.conv_padding();
  const Tensor<S> dpool2 =
      dimg.reshaped({cfg.pooled_h(), cfg.pooled_w(), cfg.conv2_filters});
  const Tensor<S> drelu2 = maxpool2_backward(dpool2, cache.pool2.argmax, cache.relu2.shape());
  const Tensor<S> dconv2 = relu_backward(drelu2, cache.conv2_pre);
  auto gc2 = conv2d_backward(dconv2, cache.pool1.output, params.conv2_k, 1, pad);
  g.conv2_k = std::move(gc2.kernels);
  g.conv2_b = std::move(gc2.bias);
  const Tensor<S> drelu1 = maxpool2_backward(gc2.input, cache.pool1.argmax, cache.relu1.shape());
  const Tensor<S> dconv1 = relu_backward(drelu1, cache.conv1_pre);
  auto gc1 = conv2d_backward(dconv1, cache.x, params.conv1_k, 1, pad);
  g.conv1_k = std::move(gc1.kernels);
  g.conv1_b = std::move(gc1.bias);
  return g;
}

// ---------------------------------------------------------------------------
// Batched forward/backward. The encoder, attention and deconvolution stages
// run per sample; the two wide dense layers (decoder and incident hidden)
// run as single GEMMs over the whole batch, which is where the time goes.

template <typename S>
struct BatchCache {
  std::vector<ModelCache<S>> per;
  Tensor<S> z;          // [B, fused]
  Tensor<S> inc1_pre;   // [B, hidden]
  Tensor<S> inc1_relu;  // [B, hidden]
};

template <typename S>
std::vector<PredictionOutput<S>> model_forward_batch(const std::vector<const Sample<S>*>& batch,
                                                     const ModelParams<S>& params,
                                                     BatchCache<S>& cache) {
  const ModelConfig& cfg = params.config;
  if (batch.empty()) throw std::invalid_argument("model_forward_batch: empty batch");
  const int b = static_cast<int>(batch.size());
  cache.per.assign(batch.size(), ModelCache<S>{});
  cache.z = Tensor<S>({b, cfg.fused_len()});

  for (int i = 0; i < b; ++i) {
    ModelCache<S>& c = cache.per[static_cast<std::size_t>(i)];
    const Sample<S>& s = *batch[static_cast<std::size_t>(i)];
    c.x = apply_input_mask(s.image.data, s.image.mask);
    const Tensor<S> img_feat = encode_image(c.x, params, c);
    const Tensor<S> tab_feat = encode_tabular(s.features, params, c);
    const Tensor<S> z = fuse_and_attend(img_feat, tab_feat, params, c);
    std::copy(z.data(), z.data() + z.size(), cache.z.data() + static_cast<long>(i) * z.size());
  }

  const Tensor<S> dec_pre = dense_forward_batch(cache.z, params.dec_w, params.dec_b);
  cache.inc1_pre = dense_forward_batch(cache.z, params.inc1_w, params.inc1_b);
  cache.inc1_relu = relu_forward(cache.inc1_pre);
  const Tensor<S> logits = dense_forward_batch(cache.inc1_relu, params.inc2_w, params.inc2_b);

  std::vector<PredictionOutput<S>> out(batch.size());
  const long dec_len = cfg.image_feature_len();
  for (int i = 0; i < b; ++i) {
    ModelCache<S>& c = cache.per[static_cast<std::size_t>(i)];
    c.dec_pre = Tensor<S>({cfg.image_feature_len()});
    std::copy(dec_pre.data() + static_cast<long>(i) * dec_len,
              dec_pre.data() + static_cast<long>(i + 1) * dec_len, c.dec_pre.data());
    c.deconv_in = c.dec_pre.reshaped({cfg.pooled_h(), cfg.pooled_w(), cfg.conv2_filters});
    c.d1_pre = deconv2d_forward(c.deconv_in, params.deconv1_k, params.deconv1_b, 2);
    c.d1_relu = relu_forward(c.d1_pre);
    c.d2_pre = deconv2d_forward(c.d1_relu, params.deconv2_k, params.deconv2_b, 2);
    c.y = sigmoid_forward(c.d2_pre).reshaped({cfg.canvas_h, cfg.canvas_w});

    c.inc1_pre = Tensor<S>({cfg.incident_hidden});
    c.inc1_relu = Tensor<S>({cfg.incident_hidden});
    std::copy(cache.inc1_pre.data() + static_cast<long>(i) * cfg.incident_hidden,
              cache.inc1_pre.data() + static_cast<long>(i + 1) * cfg.incident_hidden,
              c.inc1_pre.data());
    std::copy(cache.inc1_relu.data() + static_cast<long>(i) * cfg.incident_hidden,
              cache.inc1_relu.data() + static_cast<long>(i + 1) * cfg.incident_hidden,
              c.inc1_relu.data());
    c.logits = Tensor<S>({2});
    c.logits[0] = logits[static_cast<long>(i) * 2];
    c.logits[1] = logits[static_cast<long>(i) * 2 + 1];
    c.p = softmax_forward(c.logits, 0);

    out[static_cast<std::size_t>(i)].y_speed = c.y;
    out[static_cast<std::size_t>(i)].p_incident = c.p;
  }
  return out;
}

namespace detail {

template <typename S>
void accumulate(Tensor<S>& into, const Tensor<S>& delta) {
  Eigen::Map<VecS<S>>(into.data(), into.size()) +=
      Eigen::Map<const VecS<S>>(delta.data(), delta.size());
}

}  // namespace detail

// Summed gradients over the batch (callers average by scaling the upstream
// gradients, keeping this a pure adjoint of the batched forward).
template <typename S>
ModelParams<S> model_backward_batch(const ModelParams<S>& params, const BatchCache<S>& cache,
                                    const std::vector<Tensor<S>>& dys,
                                    const std::vector<Tensor<S>>& dlogits) {
  const ModelConfig& cfg = params.config;
  const std::size_t b = cache.per.size();
  if (dys.size() != b || dlogits.size() != b)
    throw std::invalid_argument("model_backward_batch: upstream count mismatch");
  ModelParams<S> g = make_model_params<S>(cfg);

  const long dec_len = cfg.image_feature_len();
  Tensor<S> ddec_rows({static_cast<int>(b), cfg.image_feature_len()});
  Tensor<S> dlogit_rows({static_cast<int>(b), 2});
  for (std::size_t i = 0; i < b; ++i) {
    const ModelCache<S>& c = cache.per[i];
    const Tensor<S> dy3 = dys[i].reshaped({cfg.canvas_h, cfg.canvas_w, 1});
    const Tensor<S> y3 = c.y.reshaped({cfg.canvas_h, cfg.canvas_w, 1});
    const Tensor<S> dd2 = sigmoid_backward(dy3, y3);
    auto g2 = deconv2d_backward(dd2, c.d1_relu, params.deconv2_k, 2);
    detail::accumulate(g.deconv2_k, g2.kernels);
    detail::accumulate(g.deconv2_b, g2.bias);
    const Tensor<S> dd1 = relu_backward(g2.input, c.d1_pre);
    auto g1 = deconv2d_backward(dd1, c.deconv_in, params.deconv1_k, 2);
    detail::accumulate(g.deconv1_k, g1.kernels);
    detail::accumulate(g.deconv1_b, g1.bias);
    std::copy(g1.input.data(), g1.input.data() + dec_len,
              ddec_rows.data() + static_cast<long>(i) * dec_len);
    dlogit_rows[static_cast<long>(i) * 2] = dlogits[i][0];
    dlogit_rows[static_cast<long>(i) * 2 + 1] = dlogits[i][1];
  }

  auto gd = dense_backward_batch(ddec_rows, cache.z, params.dec_w);
  g.dec_w = std::move(gd.weights);
  g.dec_b = std::move(gd.bias);
  auto gi2 = dense_backward_batch(dlogit_rows, cache.inc1_relu, params.inc2_w);
  g.inc2_w = std::move(gi2.weights);
  g.inc2_b = std::move(gi2.bias);
  const Tensor<S> di1 = relu_backward(gi2.input, cache.inc1_pre);
  auto gi1 = dense_backward_batch(di1, cache.z, params.inc1_w);
  g.inc1_w = std::move(gi1.weights);
  g.inc1_b = std::move(gi1.bias);

  for (std::size_t i = 0; i < b; ++i) {
    const ModelCache<S>& c = cache.per[i];
    Tensor<S> dz({cfg.fused_len()});
    const long off = static_cast<long>(i) * cfg.fused_len();
    for (long j = 0; j < dz.size(); ++j) dz[j] = gd.input[off + j] + gi1.input[off + j];

    Tensor<S> dfused;
    if (cfg.attention_enabled) {
      const Tensor<S> tokens = c.fused.reshaped({cfg.token_count(), cfg.d_model});
      auto ga = self_attention_backward(dz.reshaped({cfg.token_count(), cfg.d_model}), tokens,
                                        params.attn, c.attn);
      detail::accumulate(g.attn.wq, ga.wq);
      detail::accumulate(g.attn.wk, ga.wk);
      detail::accumulate(g.attn.wv, ga.wv);
      dfused = ga.tokens.reshaped({cfg.fused_len()});
    } else {
      dfused = std::move(dz);
    }

    Tensor<S> dimg({cfg.image_feature_len()});
    Tensor<S> dtab({cfg.tab_hidden});
    std::copy(dfused.data(), dfused.data() + dimg.size(), dimg.data());
    std::copy(dfused.data() + dimg.size(), dfused.data() + dfused.size(), dtab.data());

    const Tensor<S> dtab_pre = relu_backward(dtab, c.tab_pre);
    auto gt = dense_backward(dtab_pre, c.tab_in, params.tab_w);
    detail::accumulate(g.tab_w, gt.weights);
    detail::accumulate(g.tab_b, gt.bias);

    const int pad = cfg.conv_padding();
    const Tensor<S> dpool2 =
        dimg.reshaped({cfg.pooled_h(), cfg.pooled_w(), cfg.conv2_filters});
    const Tensor<S> drelu2 = maxpool2_backward(dpool2, c.pool2.argmax, c.relu2.shape());
    const Tensor<S> dconv2 = relu_backward(drelu2, c.conv2_pre);
    auto gc2 = conv2d_backward(dconv2, c.pool1.output, params.conv2_k, 1, pad);
    detail::accumulate(g.conv2_k, gc2.kernels);
    detail::accumulate(g.conv2_b, gc2.bias);
    const Tensor<S> drelu1 = maxpool2_backward(gc2.input, c.pool1.argmax, c.relu1.shape());
    const Tensor<S> dconv1 = relu_backward(drelu1, c.conv1_pre);
    auto gc1 = conv2d_backward(dconv1, c.x, params.conv1_k, 1, pad);
    detail::accumulate(g.conv1_k, gc1.kernels);
    detail::accumulate(g.conv1_b, gc1.bias);
  }
  return g;
}

}  // namespace wz
