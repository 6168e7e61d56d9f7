#include "tsp/losses.hpp"

#include <algorithm>
#include <cmath>

#include "tsp/errors.hpp"

namespace tsp {

namespace {
constexpr double kProbEps = 1e-7;
}

double focal_loss(double p, double alpha, double gamma, bool positive) {
  p = std::clamp(p, kProbEps, 1.0 - kProbEps);
  if (positive) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

ad::Value focal_loss(ad::Tape& t, ad::Value p, double alpha, double gamma, bool positive) {
  using namespace ad;
  Value pc = clamp(t, p, kProbEps, 1.0 - kProbEps);
  Value q = sub(t, t.constant(1.0), pc);  // 1 - p
  if (positive) {
    return scale(t, mul(t, pow_const(t, q, gamma), neg(t, log(t, pc))), alpha);
  }
  return scale(t, mul(t, pow_const(t, pc, gamma), neg(t, log(t, q))), 1.0 - alpha);
}

double box_loss(const Box& pred, const Box& gt, double w_l1, double w_giou) {
  const double l1 = std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) +
                    std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h);
  return w_l1 * l1 + w_giou * (1.0 - giou(pred, gt));
}

ad::Value l1_term(ad::Tape& t, ad::Value box, const Box& gt) {
  using namespace ad;
  Value target = t.constant(Tensor::row({gt.cx, gt.cy, gt.w, gt.h}));
  return sum(t, abs(t, sub(t, box, target)));
}

ad::Value giou_term(ad::Tape& t, ad::Value box, const Box& gt) {
  using namespace ad;
  Value cx = slice(t, box, 0, 1, 0, 1);
  Value cy = slice(t, box, 0, 1, 1, 2);
  Value w = slice(t, box, 0, 1, 2, 3);
  Value h = slice(t, box, 0, 1, 3, 4);
  Value hw = scale(t, w, 0.5);
  Value hh = scale(t, h, 0.5);
  Value ax1 = sub(t, cx, hw);
  Value ax2 = add(t, cx, hw);
  Value ay1 = sub(t, cy, hh);
  Value ay2 = add(t, cy, hh);

  const Corners g = to_corner(gt);
  Value gx1 = t.constant(g.x1);
  Value gy1 = t.constant(g.y1);
  Value gx2 = t.constant(g.x2);
  Value gy2 = t.constant(g.y2);

  Value iw = relu(t, sub(t, vmin(t, ax2, gx2), vmax(t, ax1, gx1)));
  Value ih = relu(t, sub(t, vmin(t, ay2, gy2), vmax(t, ay1, gy1)));
  Value inter = mul(t, iw, ih);
  Value area_pred = mul(t, w, h);
  Value area_gt = t.constant(gt.area());
  Value uni = sub(t, add(t, area_pred, area_gt), inter);
  Value iou_v = div(t, inter, uni);

  Value ew = sub(t, vmax(t, ax2, gx2), vmin(t, ax1, gx1));
  Value eh = sub(t, vmax(t, ay2, gy2), vmin(t, ay1, gy1));
  Value enclose = mul(t, ew, eh);
  return sub(t, iou_v, div(t, sub(t, enclose, uni), enclose));
}

LossReport hungarian_loss(ad::Tape& t, ad::Value probs, ad::Value boxes,
                          const PaddedGroundTruth& gts, const Matching& sigma,
                          const LossConfig& cfg) {
  using namespace ad;
  const Tensor& pv = t.val(probs);
  const Tensor& bv = t.val(boxes);
  const int n = gts.n;
  if (pv.rows != n || bv.rows != n || bv.cols != 4) {
    throw ContractError("hungarian_loss: prediction shape mismatch");
  }
  const int num_classes = pv.cols;  // C + 1

  if (static_cast<int>(sigma.sigma.size()) != n) {
    throw ContractError("hungarian_loss: sigma length mismatch");
  }
  std::vector<char> seen(n, 0);
  for (int idx : sigma.sigma) {
    if (idx < 0 || idx >= n || seen[idx]) {
      throw ContractError("hungarian_loss: sigma is not a bijection");
    }
    seen[idx] = 1;
  }

  Value class_sum = t.constant(0.0);
  Value l1_sum = t.constant(0.0);
  Value giou_sum = t.constant(0.0);
  LossReport report;

  for (int i = 0; i < n; ++i) {
    const int j = sigma.sigma[i];
    if (gts.is_real(i)) {
      const LabeledObject& obj = gts.objects[i];
      if (obj.category < 0 || obj.category >= num_classes - 1) {
        throw ContractError("hungarian_loss: category out of range");
      }
      Value p_cat = slice(t, probs, j, j + 1, obj.category, obj.category + 1);
      class_sum = add(t, class_sum, focal_loss(t, p_cat, cfg.focal_alpha, cfg.focal_gamma, true));
      Value box = slice(t, boxes, j, j + 1, 0, 4);
      l1_sum = add(t, l1_sum, l1_term(t, box, obj.box));
      Value one_minus_giou = sub(t, t.constant(1.0), giou_term(t, box, obj.box));
      giou_sum = add(t, giou_sum, one_minus_giou);
      report.matched_pairs.emplace_back(i, j);
    } else {
      Value p_noobj = slice(t, probs, j, j + 1, num_classes - 1, num_classes);
      Value p_obj = sub(t, t.constant(1.0), p_noobj);
      class_sum = add(t, class_sum, focal_loss(t, p_obj, cfg.focal_alpha, cfg.focal_gamma, false));
    }
  }

  report.class_term = scale(t, class_sum, cfg.weights.w_class);
  report.box_l1_term = scale(t, l1_sum, cfg.weights.w_l1);
  report.box_giou_term = scale(t, giou_sum, cfg.weights.w_giou);
  report.total = add(t, report.class_term, add(t, report.box_l1_term, report.box_giou_term));
  return report;
}

}  // namespace tsp
