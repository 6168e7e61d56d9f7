#include "tsp/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsp/errors.hpp"
#include "tsp/kernels.hpp"
#include "tsp/posenc.hpp"

namespace tsp {

Variant variant_from_string(const std::string& s) {
  if (s == "detr") return Variant::kDetr;
  if (s == "encoder_only") return Variant::kEncoderOnly;
  if (s == "tsp_fcos") return Variant::kTspFcos;
  if (s == "tsp_rcnn") return Variant::kTspRcnn;
  throw ConfigError("unknown variant: " + s);
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kDetr: return "detr";
    case Variant::kEncoderOnly: return "encoder_only";
    case Variant::kTspFcos: return "tsp_fcos";
    case Variant::kTspRcnn: return "tsp_rcnn";
  }
  return "?";
}

MatcherScheme matcher_from_string(const std::string& s) {
  if (s == "unrestricted") return MatcherScheme::kUnrestricted;
  if (s == "restricted") return MatcherScheme::kRestricted;
  if (s == "distilled") return MatcherScheme::kDistilled;
  if (s == "independent") return MatcherScheme::kIndependent;
  throw ConfigError("unknown matcher: " + s);
}

std::string to_string(MatcherScheme m) {
  switch (m) {
    case MatcherScheme::kUnrestricted: return "unrestricted";
    case MatcherScheme::kRestricted: return "restricted";
    case MatcherScheme::kDistilled: return "distilled";
    case MatcherScheme::kIndependent: return "independent";
  }
  return "?";
}

std::vector<int> input_dropout(int count, double rate, Rng& rng, int min_keep) {
  if (count <= 0) throw ContractError("input_dropout: empty token list");
  min_keep = std::min(std::max(min_keep, 1), count);
  std::vector<double> draws(count);
  for (double& d : draws) d = rng.uniform01();
  std::vector<int> kept;
  for (int i = 0; i < count; ++i) {
    if (draws[i] >= rate) kept.push_back(i);
  }
  if (static_cast<int>(kept.size()) < min_keep) {
    // Top up with the highest remaining draws, deterministically.
    std::vector<int> rest;
    for (int i = 0; i < count; ++i) {
      if (draws[i] < rate) rest.push_back(i);
    }
    std::stable_sort(rest.begin(), rest.end(),
                     [&](int a, int b) { return draws[a] > draws[b]; });
    for (int idx : rest) {
      if (static_cast<int>(kept.size()) >= min_keep) break;
      kept.push_back(idx);
    }
    std::sort(kept.begin(), kept.end());
  }
  return kept;
}

namespace {

struct CellRef {
  double x = 0.0;
  double y = 0.0;
  int level = 0;
  double cell_w = 0.0;
  double cell_h = 0.0;
};

std::vector<CellRef> all_cell_refs(const FeaturePyramid& pyr) {
  std::vector<CellRef> refs;
  refs.reserve(pyr.total_cells());
  for (int l = 0; l < static_cast<int>(pyr.levels.size()); ++l) {
    const int g = pyr.levels[l].grid;
    for (int r = 0; r < g; ++r) {
      for (int c = 0; c < g; ++c) {
        refs.push_back({FeaturePyramid::cell_center(g, c), FeaturePyramid::cell_center(g, r), l,
                        1.0 / g, 1.0 / g});
      }
    }
  }
  return refs;
}

Tensor stack_pyramid(const FeaturePyramid& pyr) {
  Tensor out(pyr.total_cells(), pyr.feat_dim);
  int row = 0;
  for (const FeaturePyramid::Level& level : pyr.levels) {
    std::copy(level.feats.d.begin(), level.feats.d.end(),
              out.d.begin() + static_cast<std::size_t>(row) * pyr.feat_dim);
    row += level.grid * level.grid;
  }
  return out;
}

Tensor point_pe_rows(const std::vector<CellRef>& refs, const std::vector<int>& idx, int d_model,
                     bool two_pi) {
  Tensor pe(static_cast<int>(idx.size()), d_model);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::vector<double> row = pe_point(refs[idx[i]].x, refs[idx[i]].y, d_model, two_pi);
    std::copy(row.begin(), row.end(), pe.d.begin() + i * d_model);
  }
  return pe;
}

// Descending score, scan order on ties.
std::vector<int> rank_by_score(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

// Greedy top-k proposals by score with a pairwise IoU cap among the kept set.
std::vector<int> select_proposals(const std::vector<double>& scores, const std::vector<Box>& boxes,
                                  int k, double iou_cap) {
  std::vector<int> order = rank_by_score(scores);
  if (iou_cap <= 0.0 || iou_cap >= 1.0) {
    order.resize(std::min<std::size_t>(order.size(), k));
    return order;
  }
  std::vector<int> kept;
  for (int idx : order) {
    bool clash = false;
    for (int j : kept) {
      if (iou(boxes[idx], boxes[j]) > iou_cap) {
        clash = true;
        break;
      }
    }
    if (!clash) {
      kept.push_back(idx);
      if (static_cast<int>(kept.size()) == k) break;
    }
  }
  return kept;
}

int level_for_size(const FeaturePyramid& pyr, double size) {
  const std::vector<double> bounds = level_range_bounds(static_cast<int>(pyr.levels.size()));
  for (int l = 0; l < static_cast<int>(pyr.levels.size()); ++l) {
    if (size <= bounds[l + 1]) return l;
  }
  return static_cast<int>(pyr.levels.size()) - 1;
}

std::vector<double> bilinear_sample(const FeaturePyramid::Level& level, int feat_dim, double x,
                                    double y) {
  const int g = level.grid;
  auto axis = [g](double v) {
    double u = v * g - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(g - 1));
    const int lo = std::min(static_cast<int>(u), g - 1);
    const int hi = std::min(lo + 1, g - 1);
    return std::tuple<int, int, double>(lo, hi, u - lo);
  };
  const auto [cx0, cx1, fx] = axis(x);
  const auto [cy0, cy1, fy] = axis(y);
  std::vector<double> out(feat_dim, 0.0);
  for (int f = 0; f < feat_dim; ++f) {
    const double v00 = level.feats.at(cy0 * g + cx0, f);
    const double v01 = level.feats.at(cy0 * g + cx1, f);
    const double v10 = level.feats.at(cy1 * g + cx0, f);
    const double v11 = level.feats.at(cy1 * g + cx1, f);
    out[f] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
  }
  return out;
}

}  // namespace

std::vector<double> roi_feature_raw(const FeaturePyramid& pyr, const Box& box) {
  const int level = level_for_size(pyr, std::max(box.w, box.h));
  std::vector<double> out;
  out.reserve(4 * pyr.feat_dim + 4);
  for (const double dy : {-0.25, 0.25}) {
    for (const double dx : {-0.25, 0.25}) {
      const std::vector<double> s =
          bilinear_sample(pyr.levels[level], pyr.feat_dim, box.cx + dx * box.w, box.cy + dy * box.h);
      out.insert(out.end(), s.begin(), s.end());
    }
  }
  // The proposal's own geometry: sampled side offsets are cell-relative, so
  // without these four values no head can judge how tightly the box fits.
  out.insert(out.end(), {box.cx, box.cy, box.w, box.h});
  return out;
}

Detector::Detector(DetectorConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  const EncoderConfig& e = cfg_.enc;
  if (e.d_model % 4 != 0) throw ConfigError("d_model must be divisible by 4");
  if (cfg_.variant == Variant::kTspRcnn && e.d_model % 8 != 0) {
    throw ConfigError("d_model must be divisible by 8 for box positional encodings");
  }
  if (e.heads <= 0 || e.d_k <= 0 || e.d_v <= 0) throw ConfigError("bad attention dimensions");
  if (cfg_.grid_sizes.empty()) throw ConfigError("need at least one pyramid level");

  Rng rng(Rng::mix(init_seed, 0x12A7));
  auto linear = [&rng](int fi, int fo) {
    return Tensor::uniform(fi, fo, 1.0 / std::sqrt(static_cast<double>(fi)), rng);
  };

  switch (cfg_.variant) {
    case Variant::kDetr:
      params_.add("proj.w", linear(cfg_.feat_dim, e.d_model));
      params_.add("proj.b", Tensor::zeros(1, e.d_model));
      init_encoder_params(params_, "enc", e, rng);
      init_decoder_params(params_, "dec", e, rng);
      params_.add("queries", Tensor::uniform(cfg_.n_queries, e.d_model, 1.0, rng));
      break;
    case Variant::kEncoderOnly:
      params_.add("proj.w", linear(cfg_.feat_dim, e.d_model));
      params_.add("proj.b", Tensor::zeros(1, e.d_model));
      init_encoder_params(params_, "enc", e, rng);
      break;
    case Variant::kTspFcos:
      if (e.d_model % 2 != 0) throw ConfigError("d_model must be even");
      params_.add("clsb.w", linear(cfg_.feat_dim, e.d_model / 2));
      params_.add("clsb.b", Tensor::zeros(1, e.d_model / 2));
      params_.add("auxb.w", linear(cfg_.feat_dim, e.d_model / 2));
      params_.add("auxb.b", Tensor::zeros(1, e.d_model / 2));
      params_.add("foi.w", linear(e.d_model, 1));
      params_.add("foi.b", Tensor::zeros(1, 1));
      init_encoder_params(params_, "enc", e, rng);
      break;
    case Variant::kTspRcnn:
      params_.add("rpn.w", linear(cfg_.feat_dim, 32));
      params_.add("rpn.b", Tensor::zeros(1, 32));
      params_.add("rpn.obj.w", linear(32, 1));
      params_.add("rpn.obj.b", Tensor::zeros(1, 1));
      params_.add("rpn.box.w", linear(32, 4));
      params_.add("rpn.box.b", Tensor::zeros(1, 4));
      params_.add("roi.w", linear(4 * cfg_.feat_dim + 4, e.d_model));
      params_.add("roi.b", Tensor::zeros(1, e.d_model));
      init_encoder_params(params_, "enc", e, rng);
      break;
  }
  init_head_params(params_, "head", e.d_model, cfg_.num_classes, rng);
}

namespace {

// FoI branch over every pyramid cell: two feature-extraction branches whose
// outputs are concatenated, plus the binary objectness classifier.
struct FcosCells {
  ad::Value tokens;  // cells x d_model
  ad::Value scores;  // cells x 1
};

FcosCells fcos_cells(ad::Tape& t, ParamBinding& bind, const Tensor& stacked) {
  using namespace ad;
  Value feats = t.constant(stacked);
  Value u = relu(t, add_rowvec(t, matmul(t, feats, bind("clsb.w")), bind("clsb.b")));
  Value a = relu(t, add_rowvec(t, matmul(t, feats, bind("auxb.w")), bind("auxb.b")));
  FcosCells out;
  out.tokens = concat(t, u, a, 1);
  out.scores = add_rowvec(t, matmul(t, out.tokens, bind("foi.w")), bind("foi.b"));
  return out;
}

struct RpnCells {
  ad::Value scores;  // cells x 1
  ad::Value boxes;   // cells x 4 decoded proposals
  std::vector<Box> detached;
};

RpnCells rpn_cells(ad::Tape& t, ParamBinding& bind, const Tensor& stacked,
                   const std::vector<CellRef>& refs) {
  using namespace ad;
  Value feats = t.constant(stacked);
  Value hidden = relu(t, add_rowvec(t, matmul(t, feats, bind("rpn.w")), bind("rpn.b")));
  RpnCells out;
  out.scores = add_rowvec(t, matmul(t, hidden, bind("rpn.obj.w")), bind("rpn.obj.b"));
  Value raw = add_rowvec(t, matmul(t, hidden, bind("rpn.box.w")), bind("rpn.box.b"));
  std::vector<Box> priors(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    priors[i] = Box{refs[i].x, refs[i].y, refs[i].cell_w, refs[i].cell_h};
  }
  out.boxes = decode_boxes_box_ref(t, raw, priors);
  const Tensor& bv = t.val(out.boxes);
  out.detached.resize(refs.size());
  for (int i = 0; i < bv.rows; ++i) {
    out.detached[i] = Box{bv.at(i, 0), bv.at(i, 1), bv.at(i, 2), bv.at(i, 3)};
  }
  return out;
}

std::vector<double> column_values(const ad::Tape& t, ad::Value v) {
  const Tensor& tv = t.val(v);
  return tv.d;
}

std::vector<Prediction> detach_predictions(const ad::Tape& t, ad::Value probs, ad::Value boxes) {
  const Tensor& pv = t.val(probs);
  const Tensor& bv = t.val(boxes);
  std::vector<Prediction> preds(pv.rows);
  for (int i = 0; i < pv.rows; ++i) {
    preds[i].probs.assign(pv.d.begin() + static_cast<std::size_t>(i) * pv.cols,
                          pv.d.begin() + static_cast<std::size_t>(i + 1) * pv.cols);
    preds[i].box = Box{bv.at(i, 0), bv.at(i, 1), bv.at(i, 2), bv.at(i, 3)};
  }
  return preds;
}

}  // namespace

DetectorOutput Detector::forward(ad::Tape& t, ParamBinding& bind, const FeaturePyramid& pyr,
                                 bool training, Rng* dropout_rng, int min_keep) {
  using namespace ad;
  if (pyr.feat_dim != cfg_.feat_dim) throw ContractError("forward: feature dim mismatch");
  const EncoderConfig& e = cfg_.enc;
  DetectorOutput out;

  const std::vector<CellRef> refs = all_cell_refs(pyr);
  const int coarsest = static_cast<int>(pyr.levels.size()) - 1;
  int coarse_offset = 0;
  for (int l = 0; l < coarsest; ++l) coarse_offset += pyr.levels[l].grid * pyr.levels[l].grid;

  if (cfg_.variant == Variant::kDetr || cfg_.variant == Variant::kEncoderOnly) {
    const FeaturePyramid::Level& level = pyr.levels[coarsest];
    const int n = level.grid * level.grid;
    Value tok = add_rowvec(t, matmul(t, t.constant(level.feats), bind("proj.w")), bind("proj.b"));
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int& i : idx) i += coarse_offset;
    Value pos = t.constant(point_pe_rows(refs, idx, e.d_model, cfg_.pe_two_pi));
    auto [enc_out, enc_maps] = encoder_forward(t, bind, "enc", tok, pos, e);
    out.maps = std::move(enc_maps);

    if (cfg_.variant == Variant::kDetr) {
      auto [dec_out, dec_maps] = decoder_forward(t, bind, "dec", bind("queries"), enc_out, pos, e);
      for (AttentionMap& m : dec_maps) out.maps.push_back(std::move(m));
      HeadOutput head = detection_head(t, bind, "head", dec_out, cfg_.num_classes);
      out.logits = head.class_logits;
      out.boxes = decode_boxes_absolute(t, head.box_params);
    } else {
      HeadOutput head = detection_head(t, bind, "head", enc_out, cfg_.num_classes);
      out.logits = head.class_logits;
      std::vector<std::array<double, 2>> prefs(n);
      for (int i = 0; i < n; ++i) {
        prefs[i] = {refs[coarse_offset + i].x, refs[coarse_offset + i].y};
        out.points.push_back(
            {refs[coarse_offset + i].x, refs[coarse_offset + i].y, coarsest, coarse_offset + i, 0.0});
      }
      out.boxes = decode_boxes_point_ref(t, head.box_params, prefs);
    }
  } else {
    const Tensor stacked = stack_pyramid(pyr);
    if (cfg_.k_select < 1 || cfg_.k_select > static_cast<int>(refs.size())) {
      throw ContractError("forward: k out of range");
    }

    std::vector<int> selected;
    Value tokens;
    Tensor pos_rows;
    if (cfg_.variant == Variant::kTspFcos) {
      FcosCells cells = fcos_cells(t, bind, stacked);
      const std::vector<double> scores = column_values(t, cells.scores);
      std::vector<int> order = rank_by_score(scores);
      order.resize(cfg_.k_select);
      if (training && dropout_rng != nullptr && cfg_.input_dropout > 0.0) {
        const std::vector<int> kept =
            input_dropout(cfg_.k_select, cfg_.input_dropout, *dropout_rng, min_keep);
        for (int k : kept) selected.push_back(order[k]);
      } else {
        selected = order;
      }
      tokens = gather_rows(t, cells.tokens, selected);
      pos_rows = point_pe_rows(refs, selected, e.d_model, cfg_.pe_two_pi);
      for (int idx : selected) {
        out.points.push_back({refs[idx].x, refs[idx].y, refs[idx].level, idx, scores[idx]});
      }
      out.sel_scores = cells.scores;
    } else {
      RpnCells cells = rpn_cells(t, bind, stacked, refs);
      const std::vector<double> scores = column_values(t, cells.scores);
      std::vector<int> order =
          select_proposals(scores, cells.detached, cfg_.k_select, cfg_.rpn_dedup_iou);
      if (training && dropout_rng != nullptr && cfg_.input_dropout > 0.0) {
        const std::vector<int> kept = input_dropout(static_cast<int>(order.size()),
                                                    cfg_.input_dropout, *dropout_rng, min_keep);
        for (int k : kept) selected.push_back(order[k]);
      } else {
        selected = order;
      }
      Tensor roi_rows(static_cast<int>(selected.size()), 4 * cfg_.feat_dim + 4);
      pos_rows = Tensor(static_cast<int>(selected.size()), e.d_model);
      for (std::size_t i = 0; i < selected.size(); ++i) {
        const Box& pb = cells.detached[selected[i]];
        const std::vector<double> raw = roi_feature_raw(pyr, pb);
        std::copy(raw.begin(), raw.end(), roi_rows.d.begin() + i * raw.size());
        const std::vector<double> pe = pe_box(pb, e.d_model, cfg_.pe_two_pi);
        std::copy(pe.begin(), pe.end(), pos_rows.d.begin() + i * pe.size());
        out.proposals.push_back(
            {pb, scores[selected[i]], refs[selected[i]].level, selected[i]});
      }
      tokens = relu(t, add_rowvec(t, matmul(t, t.constant(std::move(roi_rows)), bind("roi.w")),
                                  bind("roi.b")));
      out.sel_scores = cells.scores;
      out.rpn_boxes = cells.boxes;
    }

    Value pos = t.constant(std::move(pos_rows));
    auto [enc_out, enc_maps] = encoder_forward(t, bind, "enc", tokens, pos, e);
    out.maps = std::move(enc_maps);
    HeadOutput head = detection_head(t, bind, "head", enc_out, cfg_.num_classes);
    out.logits = head.class_logits;
    if (cfg_.variant == Variant::kTspFcos) {
      std::vector<std::array<double, 2>> prefs(out.points.size());
      for (std::size_t i = 0; i < out.points.size(); ++i) {
        prefs[i] = {out.points[i].x, out.points[i].y};
      }
      out.boxes = decode_boxes_point_ref(t, head.box_params, prefs);
    } else {
      std::vector<Box> prefs(out.proposals.size());
      for (std::size_t i = 0; i < out.proposals.size(); ++i) prefs[i] = out.proposals[i].box;
      out.boxes = decode_boxes_box_ref(t, head.box_params, prefs);
    }
  }

  out.probs = softmax(t, out.logits, 1);
  out.predictions = detach_predictions(t, out.probs, out.boxes);
  return out;
}

std::vector<FeaturePoint> Detector::foi_select(const FeaturePyramid& pyr, int k) {
  if (cfg_.variant != Variant::kTspFcos) throw ContractError("foi_select: wrong variant");
  if (k <= 0) throw ContractError("foi_select: k must be positive");
  if (k > pyr.total_cells()) throw ContractError("foi_select: k exceeds feature count");
  ad::Tape t;
  ParamBinding bind(t, params_);
  const std::vector<CellRef> refs = all_cell_refs(pyr);
  FcosCells cells = fcos_cells(t, bind, stack_pyramid(pyr));
  const std::vector<double> scores = column_values(t, cells.scores);
  std::vector<int> order = rank_by_score(scores);
  order.resize(k);
  std::vector<FeaturePoint> out;
  for (int idx : order) {
    out.push_back({refs[idx].x, refs[idx].y, refs[idx].level, idx, scores[idx]});
  }
  return out;
}

std::vector<Proposal> Detector::roi_select(const FeaturePyramid& pyr, int k) {
  if (cfg_.variant != Variant::kTspRcnn) throw ContractError("roi_select: wrong variant");
  if (k <= 0) throw ContractError("roi_select: k must be positive");
  if (k > pyr.total_cells()) throw ContractError("roi_select: k exceeds feature count");
  ad::Tape t;
  ParamBinding bind(t, params_);
  const std::vector<CellRef> refs = all_cell_refs(pyr);
  RpnCells cells = rpn_cells(t, bind, stack_pyramid(pyr), refs);
  const std::vector<double> scores = column_values(t, cells.scores);
  const std::vector<int> order = select_proposals(scores, cells.detached, k, cfg_.rpn_dedup_iou);
  std::vector<Proposal> out;
  for (int idx : order) {
    out.push_back({cells.detached[idx], scores[idx], refs[idx].level, idx});
  }
  return out;
}

namespace {

ad::Value binary_focal_mean(ad::Tape& t, ad::Value logits, const Tensor& targets, double alpha,
                            double gamma) {
  using namespace ad;
  const int rows = t.val(logits).rows;
  const int cols = t.val(logits).cols;
  Value p = clamp(t, sigmoid(t, logits), 1e-7, 1.0 - 1e-7);
  Value one = t.constant(Tensor::full(rows, cols, 1.0));
  Value q = sub(t, one, p);
  Value pos = scale(t, mul(t, pow_const(t, q, gamma), neg(t, log(t, p))), alpha);
  Value negv = scale(t, mul(t, pow_const(t, p, gamma), neg(t, log(t, q))), 1.0 - alpha);
  Tensor anti = targets;
  for (double& x : anti.d) x = 1.0 - x;
  Value lossv = add(t, mul(t, pos, t.constant(targets)), mul(t, negv, t.constant(anti)));
  return mean(t, lossv);
}

// Objectness targets and the selection-head losses that train the FoI
// classifier / RPN alongside the set-prediction objective.
ad::Value selection_aux_loss(ad::Tape& t, const Detector& det, const DetectorOutput& out,
                             const FeaturePyramid& pyr, const std::vector<LabeledObject>& objects,
                             const LossConfig& lcfg) {
  using namespace ad;
  const Variant variant = det.config().variant;
  if (variant != Variant::kTspFcos && variant != Variant::kTspRcnn) return t.constant(0.0);

  const std::vector<CellRef> refs = all_cell_refs(pyr);
  const int cells = static_cast<int>(refs.size());
  Tensor targets(cells, 1);

  if (variant == Variant::kTspFcos) {
    const int levels = static_cast<int>(pyr.levels.size());
    const std::vector<double> bounds = level_range_bounds(levels);
    for (int i = 0; i < cells; ++i) {
      for (const LabeledObject& obj : objects) {
        if (!contains(refs[i].x, refs[i].y, obj.box)) continue;
        const double dist = max_regression_distance(refs[i].x, refs[i].y, obj.box);
        if (dist > bounds[refs[i].level] && dist <= bounds[refs[i].level + 1]) {
          targets.d[i] = 1.0;
          break;
        }
      }
    }
    return binary_focal_mean(t, out.sel_scores, targets, lcfg.focal_alpha, lcfg.focal_gamma);
  }

  // RPN: objectness for any containing object; box regression toward the
  // smallest containing object on positive cells.
  std::vector<int> box_target(cells, -1);
  for (int i = 0; i < cells; ++i) {
    double best_area = 2.0;
    for (std::size_t g = 0; g < objects.size(); ++g) {
      if (!contains(refs[i].x, refs[i].y, objects[g].box)) continue;
      targets.d[i] = 1.0;
      if (objects[g].box.area() < best_area) {
        best_area = objects[g].box.area();
        box_target[i] = static_cast<int>(g);
      }
    }
  }
  Value loss = binary_focal_mean(t, out.sel_scores, targets, lcfg.focal_alpha, lcfg.focal_gamma);
  Value box_sum = t.constant(0.0);
  int npos = 0;
  for (int i = 0; i < cells; ++i) {
    if (box_target[i] < 0) continue;
    ++npos;
    const Box& gt = objects[box_target[i]].box;
    Value row = slice(t, out.rpn_boxes, i, i + 1, 0, 4);
    Value one_minus_giou = sub(t, t.constant(1.0), giou_term(t, row, gt));
    box_sum = add(t, box_sum, add(t, l1_term(t, row, gt), one_minus_giou));
  }
  if (npos > 0) loss = add(t, loss, scale(t, box_sum, 1.0 / npos));
  return loss;
}

AdmissibilityMask build_mask(const DetectorOutput& out, const PaddedGroundTruth& padded,
                             Variant variant, int levels) {
  if (variant == Variant::kTspFcos) {
    std::vector<MatchPoint> pts(out.points.size());
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      pts[i] = {out.points[i].x, out.points[i].y, out.points[i].level};
    }
    return fcos_admissibility(pts, padded, levels);
  }
  if (variant == Variant::kTspRcnn) {
    std::vector<Box> boxes(out.proposals.size());
    for (std::size_t i = 0; i < out.proposals.size(); ++i) boxes[i] = out.proposals[i].box;
    return rcnn_admissibility(boxes, padded);
  }
  throw ContractError("restricted matching requires a TSP variant");
}

Matching restricted_with_fallback(const DetectorOutput& out, const PaddedGroundTruth& padded,
                                  const CostWeights& w, Variant variant, int levels,
                                  int* fallbacks) {
  AdmissibilityMask mask = build_mask(out, padded, variant, levels);
  for (;;) {
    try {
      return restricted_match(out.predictions, padded, mask, w);
    } catch (const InfeasibleMatchError& e) {
      bool changed = false;
      for (int row : e.unmatched_rows) {
        if (row >= padded.m()) continue;
        for (int p = 0; p < mask.n_pred; ++p) {
          if (!mask.at(p, row)) {
            mask.at(p, row) = 1;
            changed = true;
          }
        }
        if (fallbacks != nullptr) ++*fallbacks;
      }
      if (!changed) throw;
    }
  }
}

// Per-token assignment without bipartite matching: every admissible token is
// trained toward its best object, everything else toward no-object. This is
// the dense-detector ablation of the set-prediction loss.
std::vector<int> independent_targets(const DetectorOutput& out,
                                     const std::vector<LabeledObject>& objects, Variant variant,
                                     int levels) {
  const int n = static_cast<int>(out.predictions.size());
  std::vector<int> target(n, -1);
  if (variant == Variant::kTspRcnn) {
    for (int j = 0; j < n; ++j) {
      double best = 0.5;
      for (std::size_t g = 0; g < objects.size(); ++g) {
        const double ov = iou(out.proposals[j].box, objects[g].box);
        if (ov > best) {
          best = ov;
          target[j] = static_cast<int>(g);
        }
      }
    }
  } else if (variant == Variant::kTspFcos) {
    const std::vector<double> bounds = level_range_bounds(levels);
    for (int j = 0; j < n; ++j) {
      const FeaturePoint& pt = out.points[j];
      double best_area = 2.0;
      for (std::size_t g = 0; g < objects.size(); ++g) {
        if (!contains(pt.x, pt.y, objects[g].box)) continue;
        const double dist = max_regression_distance(pt.x, pt.y, objects[g].box);
        if (dist <= bounds[pt.level] || dist > bounds[pt.level + 1]) continue;
        if (objects[g].box.area() < best_area) {
          best_area = objects[g].box.area();
          target[j] = static_cast<int>(g);
        }
      }
    }
  } else {
    throw ContractError("independent assignment requires a TSP variant");
  }
  return target;
}

LossReport independent_loss(ad::Tape& t, const DetectorOutput& out,
                            const std::vector<int>& target,
                            const std::vector<LabeledObject>& objects, const LossConfig& cfg) {
  using namespace ad;
  const int n = static_cast<int>(out.predictions.size());
  const int num_cols = t.val(out.probs).cols;
  Value class_sum = t.constant(0.0);
  Value l1_sum = t.constant(0.0);
  Value giou_sum = t.constant(0.0);
  LossReport rep;
  for (int j = 0; j < n; ++j) {
    if (target[j] >= 0) {
      const LabeledObject& obj = objects[target[j]];
      Value p_cat = slice(t, out.probs, j, j + 1, obj.category, obj.category + 1);
      class_sum = add(t, class_sum, focal_loss(t, p_cat, cfg.focal_alpha, cfg.focal_gamma, true));
      Value box = slice(t, out.boxes, j, j + 1, 0, 4);
      l1_sum = add(t, l1_sum, l1_term(t, box, obj.box));
      giou_sum = add(t, giou_sum, sub(t, t.constant(1.0), giou_term(t, box, obj.box)));
      rep.matched_pairs.emplace_back(target[j], j);
    } else {
      Value p_noobj = slice(t, out.probs, j, j + 1, num_cols - 1, num_cols);
      Value p_obj = sub(t, t.constant(1.0), p_noobj);
      class_sum = add(t, class_sum, focal_loss(t, p_obj, cfg.focal_alpha, cfg.focal_gamma, false));
    }
  }
  rep.class_term = scale(t, class_sum, cfg.weights.w_class);
  rep.box_l1_term = scale(t, l1_sum, cfg.weights.w_l1);
  rep.box_giou_term = scale(t, giou_sum, cfg.weights.w_giou);
  rep.total = add(t, rep.class_term, add(t, rep.box_l1_term, rep.box_giou_term));
  return rep;
}

// Forward + loss + backward for one scene; gradients accumulate in the store.
void run_scene(Detector& det, const Scene& scene, const FeaturePyramid& pyr, MatcherScheme scheme,
               const Matching* distilled, Rng& rng, const LossConfig& lcfg, StepStats& agg) {
  ad::Tape t;
  ParamBinding bind(t, det.params());
  const int min_keep = std::max<int>(1, static_cast<int>(scene.objects.size()));
  DetectorOutput out = det.forward(t, bind, pyr, /*training=*/true, &rng, min_keep);
  const int n = static_cast<int>(out.predictions.size());
  const PaddedGroundTruth padded = PaddedGroundTruth::pad(scene.objects, n);
  const int levels = static_cast<int>(pyr.levels.size());

  LossReport rep;
  Matching m;
  switch (scheme) {
    case MatcherScheme::kUnrestricted:
      m = optimal_match(out.predictions, padded, lcfg.weights);
      rep = hungarian_loss(t, out.probs, out.boxes, padded, m, lcfg);
      break;
    case MatcherScheme::kRestricted: {
      int fb = 0;
      m = restricted_with_fallback(out, padded, lcfg.weights, det.config().variant, levels, &fb);
      agg.fallbacks += fb;
      rep = hungarian_loss(t, out.probs, out.boxes, padded, m, lcfg);
      break;
    }
    case MatcherScheme::kDistilled: {
      if (distilled == nullptr) throw ContractError("distilled matcher needs a teacher matching");
      m = *distilled;
      rep = hungarian_loss(t, out.probs, out.boxes, padded, m, lcfg);
      break;
    }
    case MatcherScheme::kIndependent: {
      const std::vector<int> targets =
          independent_targets(out, scene.objects, det.config().variant, levels);
      rep = independent_loss(t, out, targets, scene.objects, lcfg);
      break;
    }
  }

  ad::Value aux = selection_aux_loss(t, det, out, pyr, scene.objects, lcfg);
  ad::Value root = ad::add(t, rep.total, aux);
  t.backward(root);
  bind.accumulate_grads();

  agg.loss_total += t.scalar(rep.total);
  agg.loss_class += t.scalar(rep.class_term);
  agg.loss_l1 += t.scalar(rep.box_l1_term);
  agg.loss_giou += t.scalar(rep.box_giou_term);
  agg.loss_aux += t.scalar(aux);
  agg.matchings.push_back(std::move(m));
}

}  // namespace

StepStats train_step(Detector& det, const Scene& scene, const FeaturePyramid& pyr,
                     MatcherScheme scheme, const Matching* distilled, Optimizer& opt, Rng& rng,
                     const LossConfig& lcfg) {
  std::vector<const Scene*> scenes{&scene};
  std::vector<const FeaturePyramid*> pyrs{&pyr};
  std::vector<const Matching*> dist;
  if (distilled != nullptr) dist.push_back(distilled);
  return train_batch(det, scenes, pyrs, scheme, distilled != nullptr ? &dist : nullptr, opt, rng,
                     lcfg);
}

StepStats train_batch(Detector& det, const std::vector<const Scene*>& scenes,
                      const std::vector<const FeaturePyramid*>& pyrs, MatcherScheme scheme,
                      const std::vector<const Matching*>* distilled, Optimizer& opt, Rng& rng,
                      const LossConfig& lcfg) {
  if (scenes.empty() || scenes.size() != pyrs.size()) {
    throw ContractError("train_batch: bad batch");
  }
  StepStats stats;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Matching* d = distilled != nullptr ? (*distilled)[i] : nullptr;
    run_scene(det, *scenes[i], *pyrs[i], scheme, d, rng, lcfg, stats);
  }
  const double inv = 1.0 / static_cast<double>(scenes.size());
  for (Param& p : det.params().all()) {
    kern::active().scale(p.grad.d.data(), p.grad.d.data(), inv, p.grad.numel());
  }
  opt.step(det.params());
  stats.loss_total *= inv;
  stats.loss_class *= inv;
  stats.loss_l1 *= inv;
  stats.loss_giou *= inv;
  stats.loss_aux *= inv;
  return stats;
}

SceneDetections detect(Detector& det, const FeaturePyramid& pyr) {
  ad::Tape t;
  ParamBinding bind(t, det.params());
  DetectorOutput out = det.forward(t, bind, pyr, /*training=*/false, nullptr);
  SceneDetections d;
  d.predictions = std::move(out.predictions);
  d.maps = std::move(out.maps);
  d.points = std::move(out.points);
  d.proposals = std::move(out.proposals);
  return d;
}

Matching eval_matching(Detector& det, const Scene& scene, const FeaturePyramid& pyr,
                       MatcherScheme scheme, const CostWeights& w, int* fallbacks) {
  ad::Tape t;
  ParamBinding bind(t, det.params());
  DetectorOutput out = det.forward(t, bind, pyr, /*training=*/false, nullptr);
  const PaddedGroundTruth padded =
      PaddedGroundTruth::pad(scene.objects, static_cast<int>(out.predictions.size()));
  if (scheme == MatcherScheme::kRestricted) {
    return restricted_with_fallback(out, padded, w, det.config().variant,
                                    static_cast<int>(pyr.levels.size()), fallbacks);
  }
  if (scheme == MatcherScheme::kDistilled) {
    throw ContractError("eval_matching: distilled scheme uses the teacher matching");
  }
  return optimal_match(out.predictions, padded, w);
}

}  // namespace tsp
