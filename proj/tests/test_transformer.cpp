#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "tsp/autodiff.hpp"
#include "tsp/errors.hpp"
#include "tsp/transformer.hpp"

using namespace tsp;
using ad::Tape;
using ad::Value;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double bound = 1.0) {
  return Tensor::uniform(r, c, bound, rng);
}

Tensor identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

AttentionParams make_params(Tape& t, int d_model, int heads, int d_k, int d_v, Rng& rng) {
  AttentionParams p;
  p.wq = t.leaf(random_tensor(d_model, heads * d_k, rng), true);
  p.wk = t.leaf(random_tensor(d_model, heads * d_k, rng), true);
  p.wv = t.leaf(random_tensor(d_model, heads * d_v, rng), true);
  p.wo = t.leaf(random_tensor(heads * d_v, d_model, rng), true);
  p.heads = heads;
  p.d_k = d_k;
  p.d_v = d_v;
  p.d_model = d_model;
  return p;
}

// Straight-line evaluation of multi-head attention, kept independent of the
// tape implementation.
Tensor attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& wq,
                        const Tensor& wk, const Tensor& wv, const Tensor& wo, int heads, int d_k,
                        int d_v, int d_model) {
  const int n = q.rows, m = k.rows;
  auto matmul_plain = [](const Tensor& a, const Tensor& b) {
    Tensor c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
      for (int l = 0; l < a.cols; ++l) {
        for (int j = 0; j < b.cols; ++j) c.at(i, j) += a.at(i, l) * b.at(l, j);
      }
    }
    return c;
  };
  const Tensor qw = matmul_plain(q, wq);
  const Tensor kw = matmul_plain(k, wk);
  const Tensor vw = matmul_plain(v, wv);
  Tensor concat_out(n, heads * d_v);
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < n; ++i) {
      std::vector<double> logits(m);
      double mx = -1e300;
      for (int j = 0; j < m; ++j) {
        double dot = 0.0;
        for (int x = 0; x < d_k; ++x) dot += qw.at(i, h * d_k + x) * kw.at(j, h * d_k + x);
        logits[j] = dot / std::sqrt(static_cast<double>(d_model));
        mx = std::max(mx, logits[j]);
      }
      double denom = 0.0;
      for (int j = 0; j < m; ++j) {
        logits[j] = std::exp(logits[j] - mx);
        denom += logits[j];
      }
      for (int x = 0; x < d_v; ++x) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += logits[j] / denom * vw.at(j, h * d_v + x);
        concat_out.at(i, h * d_v + x) = acc;
      }
    }
  }
  return matmul_plain(concat_out, wo);
}

ParamStore make_encoder_store(const EncoderConfig& cfg, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  init_encoder_params(store, "enc", cfg, rng);
  return store;
}

}  // namespace

TEST_CASE("attention over a single key/value returns that value row") {
  Rng rng(1);
  const int d = 4;
  Tape t;
  AttentionParams p;
  p.wq = t.constant(random_tensor(d, d, rng));
  p.wk = t.constant(random_tensor(d, d, rng));
  p.wv = t.constant(identity(d));
  p.wo = t.constant(identity(d));
  p.heads = 1;
  p.d_k = d;
  p.d_v = d;
  p.d_model = d;

  Value q = t.constant(random_tensor(3, d, rng));
  Value kv = t.constant(random_tensor(1, d, rng));
  auto [out, map] = attention(t, q, kv, kv, Value{}, Value{}, p);
  const Tensor& ov = t.val(out);
  const Tensor& target = t.val(kv);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < d; ++j) CHECK(ov.at(i, j) == doctest::Approx(target.at(0, j)));
  }
  CHECK(map.head_weights[0].rows == 3);
  for (int i = 0; i < 3; ++i) CHECK(map.head_weights[0].at(i, 0) == doctest::Approx(1.0));
}

TEST_CASE("zero logits give uniform attention and the mean of values") {
  Rng rng(2);
  const int d = 4, m = 5;
  Tape t;
  AttentionParams p;
  p.wq = t.constant(Tensor::zeros(d, d));  // all logits 0
  p.wk = t.constant(random_tensor(d, d, rng));
  p.wv = t.constant(identity(d));
  p.wo = t.constant(identity(d));
  p.heads = 1;
  p.d_k = d;
  p.d_v = d;
  p.d_model = d;

  Value q = t.constant(random_tensor(2, d, rng));
  Value kv = t.constant(random_tensor(m, d, rng));
  auto [out, map] = attention(t, q, kv, kv, Value{}, Value{}, p);
  const Tensor& vv = t.val(kv);
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < m; ++i) mean += vv.at(i, j) / m;
    CHECK(t.val(out).at(0, j) == doctest::Approx(mean).epsilon(1e-12));
  }
  for (int j = 0; j < m; ++j) {
    CHECK(map.head_weights[0].at(1, j) == doctest::Approx(1.0 / m).epsilon(1e-12));
  }
}

TEST_CASE("multi-head attention matches a straight-line oracle") {
  Rng rng(3);
  const int d = 8, heads = 2, d_k = 3, d_v = 5, n = 4, m = 6;
  Tape t;
  AttentionParams p = make_params(t, d, heads, d_k, d_v, rng);
  const Tensor q = random_tensor(n, d, rng);
  const Tensor kv = random_tensor(m, d, rng);
  auto [out, map] = attention(t, t.constant(q), t.constant(kv), t.constant(kv), Value{}, Value{}, p);
  const Tensor oracle = attention_oracle(q, kv, kv, t.val(p.wq), t.val(p.wk), t.val(p.wv),
                                         t.val(p.wo), heads, d_k, d_v, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      CHECK(std::abs(t.val(out).at(i, j) - oracle.at(i, j)) < 1e-10);
    }
  }
}

TEST_CASE("positional encodings enter queries and keys, not values") {
  Rng rng(4);
  const int d = 6;
  Tape t;
  AttentionParams p = make_params(t, d, 1, d, d, rng);
  const Tensor q = random_tensor(2, d, rng);
  const Tensor kv = random_tensor(3, d, rng);
  const Tensor pq = random_tensor(2, d, rng);
  const Tensor pk = random_tensor(3, d, rng);

  auto [with_pos, m1] =
      attention(t, t.constant(q), t.constant(kv), t.constant(kv), t.constant(pq), t.constant(pk), p);
  // Manually pre-adding the encodings to contents must give the same result.
  Tensor q2 = q;
  Tensor k2 = kv;
  for (std::size_t i = 0; i < q2.d.size(); ++i) q2.d[i] += pq.d[i];
  for (std::size_t i = 0; i < k2.d.size(); ++i) k2.d[i] += pk.d[i];
  auto [manual, m2] =
      attention(t, t.constant(q2), t.constant(k2), t.constant(kv), Value{}, Value{}, p);
  for (std::size_t i = 0; i < t.val(with_pos).d.size(); ++i) {
    CHECK(t.val(with_pos).d[i] == doctest::Approx(t.val(manual).d[i]).epsilon(1e-14));
  }
}

TEST_CASE("attention rows are stochastic") {
  Rng rng(5);
  const int d = 8;
  Tape t;
  AttentionParams p = make_params(t, d, 2, 4, 4, rng);
  Value x = t.constant(random_tensor(5, d, rng));
  auto [out, map] = attention(t, x, x, x, Value{}, Value{}, p);
  for (const Tensor& head : map.head_weights) {
    for (int i = 0; i < head.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < head.cols; ++j) {
        CHECK(head.at(i, j) >= 0.0);
        s += head.at(i, j);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("ffn with zero weights broadcasts b2") {
  Tape t;
  const int d = 4, dff = 6;
  Value w1 = t.constant(Tensor::zeros(d, dff));
  Value b1 = t.constant(Tensor::zeros(1, dff));
  Value w2 = t.constant(Tensor::zeros(dff, d));
  Tensor b2v(1, d);
  b2v.d = {1.0, -2.0, 3.0, 0.5};
  Value b2 = t.constant(b2v);
  Rng rng(6);
  Value x = t.constant(random_tensor(3, d, rng));
  Value y = ffn(t, x, w1, b1, w2, b2);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < d; ++j) CHECK(t.val(y).at(i, j) == doctest::Approx(b2v.d[j]));
  }
}

TEST_CASE("identity-shaped ffn passes positive vectors through") {
  Tape t;
  const int d = 3;
  Value w1 = t.constant(identity(d));
  Value b1 = t.constant(Tensor::zeros(1, d));
  Value w2 = t.constant(identity(d));
  Value b2 = t.constant(Tensor::zeros(1, d));
  Tensor xv(1, d);
  xv.d = {0.5, 1.5, 2.0};
  Value y = ffn(t, t.constant(xv), w1, b1, w2, b2);
  for (int j = 0; j < d; ++j) CHECK(t.val(y).at(0, j) == doctest::Approx(xv.d[j]));
}

TEST_CASE("ffn matches direct evaluation on random inputs") {
  Rng rng(7);
  const int d = 5, dff = 7;
  Tape t;
  const Tensor w1 = random_tensor(d, dff, rng);
  const Tensor b1 = random_tensor(1, dff, rng);
  const Tensor w2 = random_tensor(dff, d, rng);
  const Tensor b2 = random_tensor(1, d, rng);
  const Tensor x = random_tensor(2, d, rng);
  Value y = ffn(t, t.constant(x), t.constant(w1), t.constant(b1), t.constant(w2), t.constant(b2));
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < d; ++j) {
      double acc = b2.d[j];
      for (int h = 0; h < dff; ++h) {
        double hidden = b1.d[h];
        for (int c = 0; c < d; ++c) hidden += x.at(i, c) * w1.at(c, h);
        acc += std::max(0.0, hidden) * w2.at(h, j);
      }
      CHECK(t.val(y).at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("encoder maps one token to one finite token") {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_k = 8;
  cfg.d_v = 8;
  cfg.d_ffn = 24;
  ParamStore store = make_encoder_store(cfg, 8);
  Tape t;
  ParamBinding bind(t, store);
  Rng rng(9);
  Value x = t.constant(random_tensor(1, cfg.d_model, rng));
  Value pos = t.constant(random_tensor(1, cfg.d_model, rng, 0.5));
  auto [out, maps] = encoder_forward(t, bind, "enc", x, pos, cfg);
  CHECK(t.val(out).rows == 1);
  CHECK(t.val(out).cols == cfg.d_model);
  CHECK(t.val(out).all_finite());
  CHECK(maps.size() == 2);
}

TEST_CASE("encoder is permutation equivariant with its positional encodings") {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_k = 8;
  cfg.d_v = 8;
  cfg.d_ffn = 24;
  ParamStore store = make_encoder_store(cfg, 10);
  Rng rng(11);
  const int n = 5;
  const Tensor x = random_tensor(n, cfg.d_model, rng);
  const Tensor pos = random_tensor(n, cfg.d_model, rng, 0.5);
  const std::vector<int> perm = {3, 0, 4, 1, 2};

  Tape t1;
  ParamBinding b1(t1, store);
  auto [out1, m1] = encoder_forward(t1, b1, "enc", t1.constant(x), t1.constant(pos), cfg);

  Tensor xp(n, cfg.d_model), pp(n, cfg.d_model);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < cfg.d_model; ++j) {
      xp.at(i, j) = x.at(perm[i], j);
      pp.at(i, j) = pos.at(perm[i], j);
    }
  }
  Tape t2;
  ParamBinding b2(t2, store);
  auto [out2, m2] = encoder_forward(t2, b2, "enc", t2.constant(xp), t2.constant(pp), cfg);

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < cfg.d_model; ++j) {
      CHECK(t2.val(out2).at(i, j) == doctest::Approx(t1.val(out1).at(perm[i], j)).epsilon(1e-9));
    }
  }
}

TEST_CASE("grad check through a full encoder layer") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_k = 8;
  cfg.d_v = 8;
  cfg.d_ffn = 16;
  ParamStore store = make_encoder_store(cfg, 12);
  Rng rng(13);
  const Tensor pos = random_tensor(4, cfg.d_model, rng, 0.5);
  const Tensor probe = random_tensor(4, cfg.d_model, rng);

  auto f = [&](Tape& t, Value x) {
    ParamBinding bind(t, store);
    auto [out, maps] = encoder_forward(t, bind, "enc", x, t.constant(pos), cfg);
    return ad::sum(t, ad::mul(t, out, t.constant(probe)));
  };
  CHECK(ad::grad_check(f, random_tensor(4, cfg.d_model, rng), 1e-6) < 1e-4);
}

TEST_CASE("grad check through encoder plus decoder stack") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_k = 4;
  cfg.d_v = 4;
  cfg.d_ffn = 8;
  ParamStore store;
  Rng prng(14);
  init_encoder_params(store, "enc", cfg, prng);
  init_decoder_params(store, "dec", cfg, prng);
  Rng rng(15);
  const Tensor pos = random_tensor(3, cfg.d_model, rng, 0.5);
  const Tensor queries = random_tensor(4, cfg.d_model, rng);
  const Tensor probe = random_tensor(4, cfg.d_model, rng);

  auto f = [&](Tape& t, Value x) {
    ParamBinding bind(t, store);
    auto [enc_out, m1] = encoder_forward(t, bind, "enc", x, t.constant(pos), cfg);
    auto [dec_out, m2] =
        decoder_forward(t, bind, "dec", t.constant(queries), enc_out, t.constant(pos), cfg);
    return ad::sum(t, ad::mul(t, dec_out, t.constant(probe)));
  };
  CHECK(ad::grad_check(f, random_tensor(3, cfg.d_model, rng), 1e-6) < 1e-4);
}

TEST_CASE("decoder cross-attention concentrates on a single encoder token") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_k = 4;
  cfg.d_v = 4;
  cfg.d_ffn = 8;
  ParamStore store;
  Rng prng(16);
  init_decoder_params(store, "dec", cfg, prng);
  Rng rng(17);
  Tape t;
  ParamBinding bind(t, store);
  Value queries = t.constant(random_tensor(5, cfg.d_model, rng));
  Value enc_out = t.constant(random_tensor(1, cfg.d_model, rng));
  Value enc_pos = t.constant(random_tensor(1, cfg.d_model, rng));
  auto [out, maps] = decoder_forward(t, bind, "dec", queries, enc_out, enc_pos, cfg);
  bool saw_cross = false;
  for (const AttentionMap& m : maps) {
    if (m.kind != AttentionMap::Kind::kCross) continue;
    saw_cross = true;
    for (const Tensor& head : m.head_weights) {
      CHECK(head.cols == 1);
      for (int i = 0; i < head.rows; ++i) CHECK(head.at(i, 0) == doctest::Approx(1.0));
    }
  }
  CHECK(saw_cross);
}

TEST_CASE("zeroed projections give uniform cross-attention maps") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 8;
  cfg.heads = 1;
  cfg.d_k = 8;
  cfg.d_v = 8;
  cfg.d_ffn = 8;
  ParamStore store;
  Rng prng(18);
  init_decoder_params(store, "dec", cfg, prng);
  store.get("dec.l0.cross.wq").value.fill(0.0);
  Rng rng(19);
  Tape t;
  ParamBinding bind(t, store);
  const int m = 6;
  auto [out, maps] = decoder_forward(t, bind, "dec", t.constant(random_tensor(3, cfg.d_model, rng)),
                                     t.constant(random_tensor(m, cfg.d_model, rng)),
                                     t.constant(random_tensor(m, cfg.d_model, rng)), cfg);
  for (const AttentionMap& am : maps) {
    if (am.kind != AttentionMap::Kind::kCross) continue;
    for (const Tensor& head : am.head_weights) {
      for (int i = 0; i < head.rows; ++i) {
        for (int j = 0; j < head.cols; ++j) {
          CHECK(head.at(i, j) == doctest::Approx(1.0 / m).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("detection head shape contract and weight sharing across tokens") {
  ParamStore store;
  Rng prng(20);
  const int d = 16, C = 3;
  init_head_params(store, "head", d, C, prng);
  Rng rng(21);
  Tensor tokens = random_tensor(3, d, rng);
  // Duplicate token 0 into token 2.
  for (int j = 0; j < d; ++j) tokens.at(2, j) = tokens.at(0, j);
  Tape t;
  ParamBinding bind(t, store);
  HeadOutput out = detection_head(t, bind, "head", t.constant(tokens), C);
  CHECK(t.val(out.class_logits).rows == 3);
  CHECK(t.val(out.class_logits).cols == C + 1);
  CHECK(t.val(out.box_params).cols == 4);
  for (int j = 0; j < C + 1; ++j) {
    CHECK(t.val(out.class_logits).at(2, j) == doctest::Approx(t.val(out.class_logits).at(0, j)));
  }
  for (int j = 0; j < 4; ++j) {
    CHECK(t.val(out.box_params).at(2, j) == doctest::Approx(t.val(out.box_params).at(0, j)));
  }
}

TEST_CASE("detection head gradient check") {
  ParamStore store;
  Rng prng(22);
  const int d = 8, C = 2;
  init_head_params(store, "head", d, C, prng);
  Rng rng(23);
  const Tensor probe_c = random_tensor(2, C + 1, rng);
  const Tensor probe_b = random_tensor(2, 4, rng);
  auto f = [&](Tape& t, Value x) {
    ParamBinding bind(t, store);
    HeadOutput out = detection_head(t, bind, "head", x, C);
    Value a = ad::sum(t, ad::mul(t, out.class_logits, t.constant(probe_c)));
    Value b = ad::sum(t, ad::mul(t, out.box_params, t.constant(probe_b)));
    return ad::add(t, a, b);
  };
  CHECK(ad::grad_check(f, random_tensor(2, d, rng), 1e-6) < 1e-4);
}

TEST_CASE("reference-point box decoding") {
  const Box b0 = decode_box_reference({0.0, 0.0, 0.0, 0.0}, 0.5, 0.5);
  CHECK(b0.cx == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(b0.cy == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(b0.w == doctest::Approx(0.5));

  const Box b1 = decode_box_reference({0.0, 0.3, 0.0, 0.0}, 0.25, 0.7);
  CHECK(b1.cx == doctest::Approx(0.25).epsilon(1e-9));

  const Box b2 = decode_box_reference({1.0, 0.0, 0.0, 0.0}, 0.5, 0.5);
  CHECK(b2.cx == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(b2.cx == doctest::Approx(0.7311).epsilon(1e-4));

  // Extreme references are clamped, outputs stay valid boxes.
  Rng rng(24);
  for (int i = 0; i < 200; ++i) {
    const Box b = decode_box_reference(
        {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)},
        rng.uniform01(), rng.uniform01());
    CHECK(b.cx > 0.0);
    CHECK(b.cx < 1.0);
    CHECK(b.cy > 0.0);
    CHECK(b.cy < 1.0);
    CHECK(b.w > 0.0);
    CHECK(b.w < 1.0);
    CHECK(b.h > 0.0);
    CHECK(b.h < 1.0);
  }
  const Box edge = decode_box_reference({0.0, 0.0, 0.0, 0.0}, 0.0, 1.0);
  CHECK(std::isfinite(edge.cx));
  CHECK(edge.cx > 0.0);
  CHECK(edge.cy < 1.0);
}

TEST_CASE("tape and plain box decoding agree") {
  Rng rng(25);
  std::vector<std::array<double, 2>> refs = {{0.3, 0.7}, {0.5, 0.1}};
  Tensor raw = random_tensor(2, 4, rng);
  Tape t;
  Value decoded = decode_boxes_point_ref(t, t.constant(raw), refs);
  for (int i = 0; i < 2; ++i) {
    const Box plain = decode_box_reference(
        {raw.at(i, 0), raw.at(i, 1), raw.at(i, 2), raw.at(i, 3)}, refs[i][0], refs[i][1]);
    CHECK(t.val(decoded).at(i, 0) == doctest::Approx(plain.cx).epsilon(1e-12));
    CHECK(t.val(decoded).at(i, 1) == doctest::Approx(plain.cy).epsilon(1e-12));
    CHECK(t.val(decoded).at(i, 2) == doctest::Approx(plain.w).epsilon(1e-12));
    CHECK(t.val(decoded).at(i, 3) == doctest::Approx(plain.h).epsilon(1e-12));
  }
}

TEST_CASE("checkpoints round-trip bit exactly") {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_k = 8;
  cfg.d_v = 8;
  cfg.d_ffn = 24;
  ParamStore store = make_encoder_store(cfg, 26);
  const std::string path =
      (std::filesystem::temp_directory_path() / "tspdet_ckpt_test.bin").string();
  save_checkpoint(store, path);

  ParamStore loaded = make_encoder_store(cfg, 999);  // different init
  load_checkpoint(loaded, path);
  for (std::size_t i = 0; i < store.all().size(); ++i) {
    const Param& a = store.all()[i];
    const Param& b = loaded.all()[i];
    CHECK(a.name == b.name);
    REQUIRE(a.value.numel() == b.value.numel());
    CHECK(std::memcmp(a.value.d.data(), b.value.d.data(), a.value.numel() * sizeof(double)) == 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects mismatched stores") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_k = 4;
  cfg.d_v = 4;
  cfg.d_ffn = 8;
  ParamStore store = make_encoder_store(cfg, 27);
  const std::string path =
      (std::filesystem::temp_directory_path() / "tspdet_ckpt_test2.bin").string();
  save_checkpoint(store, path);
  EncoderConfig other = cfg;
  other.layers = 2;
  ParamStore wrong = make_encoder_store(other, 28);
  CHECK_THROWS_AS(load_checkpoint(wrong, path), IoError);
  std::filesystem::remove(path);
}
