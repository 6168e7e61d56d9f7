#include "tsp/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "tsp/errors.hpp"

namespace tsp {

namespace {

double clamp_unit(double x) { return std::clamp(x, 1e-6, 1.0 - 1e-6); }

double logit(double x) {
  x = clamp_unit(x);
  return std::log(x / (1.0 - x));
}

Tensor init_linear(int fan_in, int fan_out, Rng& rng) {
  return Tensor::uniform(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace

std::pair<ad::Value, AttentionMap> attention(ad::Tape& t, ad::Value q, ad::Value k, ad::Value v,
                                             ad::Value pos_q, ad::Value pos_k,
                                             const AttentionParams& params,
                                             const Tensor* add_mask) {
  using namespace ad;
  // Dimensions are copied out up front: tape references go stale as ops are
  // appended.
  const int n_q = t.val(q).rows;
  const int n_kv = t.val(k).rows;
  if (t.val(q).cols != params.d_model || t.val(k).cols != params.d_model ||
      t.val(v).cols != params.d_model) {
    throw ContractError("attention: token width must equal d_model");
  }
  if (n_kv != t.val(v).rows) throw ContractError("attention: key/value length mismatch");

  Value qin = pos_q.valid() ? add(t, q, pos_q) : q;
  Value kin = pos_k.valid() ? add(t, k, pos_k) : k;
  Value qw = matmul(t, qin, params.wq);  // n x H*d_k
  Value kw = matmul(t, kin, params.wk);
  Value vw = matmul(t, v, params.wv);  // m x H*d_v

  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(params.d_model));
  AttentionMap map;
  map.head_weights.reserve(params.heads);

  Value heads_out;
  for (int h = 0; h < params.heads; ++h) {
    Value qh = slice(t, qw, 0, n_q, h * params.d_k, (h + 1) * params.d_k);
    Value kh = slice(t, kw, 0, n_kv, h * params.d_k, (h + 1) * params.d_k);
    Value vh = slice(t, vw, 0, n_kv, h * params.d_v, (h + 1) * params.d_v);
    Value logits = scale(t, matmul(t, qh, transpose(t, kh)), inv_scale);
    Value attn = softmax(t, logits, 1, add_mask);
    map.head_weights.push_back(t.val(attn));
    Value out_h = matmul(t, attn, vh);
    heads_out = h == 0 ? out_h : concat(t, heads_out, out_h, 1);
  }
  return {matmul(t, heads_out, params.wo), std::move(map)};
}

ad::Value ffn(ad::Tape& t, ad::Value x, ad::Value w1, ad::Value b1, ad::Value w2, ad::Value b2) {
  using namespace ad;
  Value hidden = relu(t, add_rowvec(t, matmul(t, x, w1), b1));
  return add_rowvec(t, matmul(t, hidden, w2), b2);
}

void init_attention_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                           Rng& rng) {
  store.add(prefix + ".wq", init_linear(cfg.d_model, cfg.heads * cfg.d_k, rng));
  store.add(prefix + ".wk", init_linear(cfg.d_model, cfg.heads * cfg.d_k, rng));
  store.add(prefix + ".wv", init_linear(cfg.d_model, cfg.heads * cfg.d_v, rng));
  store.add(prefix + ".wo", init_linear(cfg.heads * cfg.d_v, cfg.d_model, rng));
}

void init_ffn_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                     Rng& rng) {
  store.add(prefix + ".w1", init_linear(cfg.d_model, cfg.d_ffn, rng));
  store.add(prefix + ".b1", Tensor::zeros(1, cfg.d_ffn));
  store.add(prefix + ".w2", init_linear(cfg.d_ffn, cfg.d_model, rng));
  store.add(prefix + ".b2", Tensor::zeros(1, cfg.d_model));
}

void init_layernorm_params(ParamStore& store, const std::string& prefix, int d_model) {
  store.add(prefix + ".g", Tensor::full(1, d_model, 1.0));
  store.add(prefix + ".b", Tensor::zeros(1, d_model));
}

void init_encoder_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng) {
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    init_attention_params(store, lp + ".self", cfg, rng);
    init_layernorm_params(store, lp + ".ln1", cfg.d_model);
    init_ffn_params(store, lp + ".ffn", cfg, rng);
    init_layernorm_params(store, lp + ".ln2", cfg.d_model);
  }
}

void init_decoder_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng) {
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    init_attention_params(store, lp + ".self", cfg, rng);
    init_layernorm_params(store, lp + ".ln1", cfg.d_model);
    init_attention_params(store, lp + ".cross", cfg, rng);
    init_layernorm_params(store, lp + ".ln2", cfg.d_model);
    init_ffn_params(store, lp + ".ffn", cfg, rng);
    init_layernorm_params(store, lp + ".ln3", cfg.d_model);
  }
}

void init_head_params(ParamStore& store, const std::string& prefix, int d_model, int num_classes,
                      Rng& rng) {
  store.add(prefix + ".wh", init_linear(d_model, d_model, rng));
  store.add(prefix + ".bh", Tensor::zeros(1, d_model));
  store.add(prefix + ".wc", init_linear(d_model, num_classes + 1, rng));
  store.add(prefix + ".bc", Tensor::zeros(1, num_classes + 1));
  store.add(prefix + ".wb", init_linear(d_model, 4, rng));
  store.add(prefix + ".bb", Tensor::zeros(1, 4));
}

AttentionParams bind_attention_params(ParamBinding& bind, const std::string& prefix,
                                      const EncoderConfig& cfg) {
  AttentionParams p;
  p.wq = bind(prefix + ".wq");
  p.wk = bind(prefix + ".wk");
  p.wv = bind(prefix + ".wv");
  p.wo = bind(prefix + ".wo");
  p.heads = cfg.heads;
  p.d_k = cfg.d_k;
  p.d_v = cfg.d_v;
  p.d_model = cfg.d_model;
  return p;
}

std::pair<ad::Value, std::vector<AttentionMap>> encoder_forward(ad::Tape& t, ParamBinding& bind,
                                                                const std::string& prefix,
                                                                ad::Value tokens, ad::Value pos,
                                                                const EncoderConfig& cfg) {
  using namespace ad;
  std::vector<AttentionMap> maps;
  Value x = tokens;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    auto [attn_out, map] = attention(t, x, x, x, pos, pos,
                                     bind_attention_params(bind, lp + ".self", cfg));
    map.layer = l;
    map.kind = AttentionMap::Kind::kSelf;
    maps.push_back(std::move(map));
    x = layernorm(t, add(t, x, attn_out), bind(lp + ".ln1.g"), bind(lp + ".ln1.b"));
    Value f = ffn(t, x, bind(lp + ".ffn.w1"), bind(lp + ".ffn.b1"), bind(lp + ".ffn.w2"),
                  bind(lp + ".ffn.b2"));
    x = layernorm(t, add(t, x, f), bind(lp + ".ln2.g"), bind(lp + ".ln2.b"));
  }
  return {x, std::move(maps)};
}

std::pair<ad::Value, std::vector<AttentionMap>> decoder_forward(ad::Tape& t, ParamBinding& bind,
                                                                const std::string& prefix,
                                                                ad::Value query_pos,
                                                                ad::Value enc_out, ad::Value enc_pos,
                                                                const EncoderConfig& cfg) {
  using namespace ad;
  const int n_queries = t.val(query_pos).rows;
  std::vector<AttentionMap> maps;
  Value x = t.constant(Tensor::zeros(n_queries, cfg.d_model));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    auto [self_out, self_map] = attention(t, x, x, x, query_pos, query_pos,
                                          bind_attention_params(bind, lp + ".self", cfg));
    self_map.layer = l;
    self_map.kind = AttentionMap::Kind::kSelf;
    maps.push_back(std::move(self_map));
    x = layernorm(t, add(t, x, self_out), bind(lp + ".ln1.g"), bind(lp + ".ln1.b"));

    auto [cross_out, cross_map] = attention(t, x, enc_out, enc_out, query_pos, enc_pos,
                                            bind_attention_params(bind, lp + ".cross", cfg));
    cross_map.layer = l;
    cross_map.kind = AttentionMap::Kind::kCross;
    maps.push_back(std::move(cross_map));
    x = layernorm(t, add(t, x, cross_out), bind(lp + ".ln2.g"), bind(lp + ".ln2.b"));

    Value f = ffn(t, x, bind(lp + ".ffn.w1"), bind(lp + ".ffn.b1"), bind(lp + ".ffn.w2"),
                  bind(lp + ".ffn.b2"));
    x = layernorm(t, add(t, x, f), bind(lp + ".ln3.g"), bind(lp + ".ln3.b"));
  }
  return {x, std::move(maps)};
}

HeadOutput detection_head(ad::Tape& t, ParamBinding& bind, const std::string& prefix,
                          ad::Value tokens, int num_classes) {
  using namespace ad;
  (void)num_classes;
  Value hidden = relu(t, add_rowvec(t, matmul(t, tokens, bind(prefix + ".wh")), bind(prefix + ".bh")));
  HeadOutput out;
  out.class_logits = add_rowvec(t, matmul(t, hidden, bind(prefix + ".wc")), bind(prefix + ".bc"));
  out.box_params = add_rowvec(t, matmul(t, hidden, bind(prefix + ".wb")), bind(prefix + ".bb"));
  return out;
}

Box decode_box_reference(const std::array<double, 4>& raw, double ref_x, double ref_y) {
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  Box b;
  b.cx = sig(raw[0] + logit(ref_x));
  b.cy = sig(raw[1] + logit(ref_y));
  b.w = sig(raw[2]);
  b.h = sig(raw[3]);
  return b;
}

ad::Value decode_boxes_absolute(ad::Tape& t, ad::Value raw) {
  return ad::sigmoid(t, raw);
}

ad::Value decode_boxes_point_ref(ad::Tape& t, ad::Value raw,
                                 const std::vector<std::array<double, 2>>& refs) {
  using namespace ad;
  const Tensor& rv = t.val(raw);
  if (rv.cols != 4 || rv.rows != static_cast<int>(refs.size())) {
    throw ContractError("decode_boxes_point_ref: shape mismatch");
  }
  Tensor offsets(rv.rows, 4);
  for (int i = 0; i < rv.rows; ++i) {
    offsets.at(i, 0) = logit(refs[i][0]);
    offsets.at(i, 1) = logit(refs[i][1]);
  }
  return sigmoid(t, add(t, raw, t.constant(std::move(offsets))));
}

ad::Value decode_boxes_box_ref(ad::Tape& t, ad::Value raw, const std::vector<Box>& refs) {
  using namespace ad;
  const Tensor& rv = t.val(raw);
  if (rv.cols != 4 || rv.rows != static_cast<int>(refs.size())) {
    throw ContractError("decode_boxes_box_ref: shape mismatch");
  }
  Tensor offsets(rv.rows, 4);
  for (int i = 0; i < rv.rows; ++i) {
    offsets.at(i, 0) = logit(refs[i].cx);
    offsets.at(i, 1) = logit(refs[i].cy);
    offsets.at(i, 2) = logit(refs[i].w);
    offsets.at(i, 3) = logit(refs[i].h);
  }
  return sigmoid(t, add(t, raw, t.constant(std::move(offsets))));
}

}  // namespace tsp
