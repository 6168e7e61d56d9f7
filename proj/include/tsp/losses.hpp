#pragma once

#include <utility>
#include <vector>

#include "tsp/autodiff.hpp"
#include "tsp/geometry.hpp"
#include "tsp/matching.hpp"

namespace tsp {

// focal_alpha weights the positive side; the no-object side gets 1 - alpha.
// Set prediction wants the no-object pressure well below the positive pull
// (the padded slots vastly outnumber real objects), hence the 0.75 default.
struct LossConfig {
  CostWeights weights;
  double focal_alpha = 0.75;
  double focal_gamma = 2.0;
};

// Set-prediction loss terms, kept as tape nodes so the whole objective stays
// differentiable. Each term already carries its configured weight, so
// total = class_term + box_l1_term + box_giou_term. Box terms accumulate only
// over real (non no-object) slots. matched_pairs lists (gt index, prediction
// index) for the real objects.
struct LossReport {
  ad::Value total;
  ad::Value class_term;
  ad::Value box_l1_term;
  ad::Value box_giou_term;
  std::vector<std::pair<int, int>> matched_pairs;
};

// Focal loss on a probability. Positive: -alpha * (1-p)^gamma * ln(p).
// Negative: -(1-alpha) * p^gamma * ln(1-p). p is clamped to
// [1e-7, 1 - 1e-7] before the logs.
double focal_loss(double p, double alpha, double gamma, bool positive = true);
ad::Value focal_loss(ad::Tape& t, ad::Value p, double alpha, double gamma, bool positive = true);

// w_l1 * sum |delta(cx,cy,w,h)| + w_giou * (1 - giou).
double box_loss(const Box& pred, const Box& gt, double w_l1, double w_giou);

// Differentiable pieces over a 1x4 (cx, cy, w, h) node. The gt box must have
// positive area.
ad::Value l1_term(ad::Tape& t, ad::Value box, const Box& gt);
ad::Value giou_term(ad::Tape& t, ad::Value box, const Box& gt);  // the giou value itself

// Hungarian loss over a fixed assignment. probs is n x (C+1) with the
// no-object class last; boxes is n x 4. Real slot i contributes a positive
// focal term on p(category) plus weighted box losses against prediction
// sigma[i]; a no-object slot contributes a negative focal term on
// 1 - p(no-object), pushing its prediction toward the no-object class.
// sigma is treated as a constant. Throws ContractError unless sigma is a
// bijection on [0, n).
LossReport hungarian_loss(ad::Tape& t, ad::Value probs, ad::Value boxes,
                          const PaddedGroundTruth& gts, const Matching& sigma,
                          const LossConfig& cfg);

}  // namespace tsp
