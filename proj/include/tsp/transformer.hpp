#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "tsp/autodiff.hpp"
#include "tsp/geometry.hpp"
#include "tsp/params.hpp"
#include "tsp/rng.hpp"

namespace tsp {

struct EncoderConfig {
  int layers = 3;
  int d_model = 64;
  int heads = 4;
  int d_k = 16;
  int d_v = 16;
  int d_ffn = 128;
};

// Row-stochastic per-head attention weights captured during a forward pass.
struct AttentionMap {
  enum class Kind { kSelf, kCross };
  std::vector<Tensor> head_weights;  // one n x m tensor per head
  int layer = 0;
  Kind kind = Kind::kSelf;
};

struct AttentionParams {
  ad::Value wq, wk, wv, wo;
  int heads = 0;
  int d_k = 0;
  int d_v = 0;
  int d_model = 0;
};

// Multi-head attention. Positional encodings (when valid) are added to the
// query/key contents before projection; values are projected as-is. Logits
// are scaled by 1/sqrt(d_model) and softmaxed per row; add_mask, when given,
// is added to the logits (large negative entries forbid positions).
std::pair<ad::Value, AttentionMap> attention(ad::Tape& t, ad::Value q, ad::Value k, ad::Value v,
                                             ad::Value pos_q, ad::Value pos_k,
                                             const AttentionParams& params,
                                             const Tensor* add_mask = nullptr);

// max(0, x W1 + b1) W2 + b2
ad::Value ffn(ad::Tape& t, ad::Value x, ad::Value w1, ad::Value b1, ad::Value w2, ad::Value b2);

// Parameter construction. Initial weights are uniform in +-1/sqrt(fan_in);
// layer-norm gains start at 1, every bias at 0.
void init_attention_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                           Rng& rng);
void init_ffn_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                     Rng& rng);
void init_layernorm_params(ParamStore& store, const std::string& prefix, int d_model);
void init_encoder_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng);
void init_decoder_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng);
void init_head_params(ParamStore& store, const std::string& prefix, int d_model, int num_classes,
                      Rng& rng);

AttentionParams bind_attention_params(ParamBinding& bind, const std::string& prefix,
                                      const EncoderConfig& cfg);

// Post-norm encoder stack: per layer, self-attention then FFN, each wrapped
// in residual + layer norm. pos is re-added to queries/keys at every layer.
std::pair<ad::Value, std::vector<AttentionMap>> encoder_forward(ad::Tape& t, ParamBinding& bind,
                                                                const std::string& prefix,
                                                                ad::Value tokens, ad::Value pos,
                                                                const EncoderConfig& cfg);

// Non-autoregressive decoder: all queries in parallel. Per layer: query
// self-attention, cross-attention into the encoder outputs, FFN. query_pos
// (the learned query embeddings) plays the positional-encoding role on the
// query side; content starts at zero.
std::pair<ad::Value, std::vector<AttentionMap>> decoder_forward(ad::Tape& t, ParamBinding& bind,
                                                                const std::string& prefix,
                                                                ad::Value query_pos,
                                                                ad::Value enc_out, ad::Value enc_pos,
                                                                const EncoderConfig& cfg);

// Shared per-token head: one hidden ReLU layer, then class logits (C real
// classes plus trailing no-object) and 4 raw box parameters.
struct HeadOutput {
  ad::Value class_logits;  // n x (C+1)
  ad::Value box_params;    // n x 4
};
HeadOutput detection_head(ad::Tape& t, ParamBinding& bind, const std::string& prefix,
                          ad::Value tokens, int num_classes);

// Box decoding. Reference forms run the raw offsets through
// sigma(b + logit(ref)); sizes without a reference use a plain sigmoid.
// References are clamped to [1e-6, 1 - 1e-6] before the logit.
Box decode_box_reference(const std::array<double, 4>& raw, double ref_x, double ref_y);

ad::Value decode_boxes_absolute(ad::Tape& t, ad::Value raw);
ad::Value decode_boxes_point_ref(ad::Tape& t, ad::Value raw,
                                 const std::vector<std::array<double, 2>>& refs);
ad::Value decode_boxes_box_ref(ad::Tape& t, ad::Value raw, const std::vector<Box>& refs);

}  // namespace tsp
