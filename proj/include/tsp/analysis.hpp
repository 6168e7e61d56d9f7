#pragma once

#include <vector>

#include "tsp/detectors.hpp"
#include "tsp/matching.hpp"
#include "tsp/transformer.hpp"

namespace tsp {

// Negative-entropy sparsity of an attention map: the average over heads and
// source rows of (1/m) * sum_j p log p (natural log, 0 log 0 := 0), where m
// counts unmasked target columns. Always <= 0; equals 0 only on one-hot
// rows. target_mask, when given, marks excluded columns (nonzero = masked).
// paper_prefactor=false drops the 1/m factor (plain negative entropy).
double attention_sparsity(const AttentionMap& map, const std::vector<char>* target_mask = nullptr,
                          bool paper_prefactor = true);

// Fraction of real objects whose assigned prediction index changed between
// two matchings of the same scene. m_real = 0 yields 0.
double matching_instability(const Matching& prev, const Matching& curr, int m_real);

// The teacher's optimal assignment for a scene, from a deterministic
// evaluation-mode forward. Frozen by the caller as the student's target.
Matching distill_matching(Detector& teacher, const Scene& scene, const FeaturePyramid& pyr,
                          const CostWeights& w);

// Among predictions whose top real-class score reaches conf_threshold, the
// fraction that sit in a same-class pair with iou > iou_threshold.
double duplicate_rate(const std::vector<Prediction>& preds, double conf_threshold = 0.5,
                      double iou_threshold = 0.5);

struct Detection {
  Box box;
  int category = 0;
  double score = 0.0;
};

// One detection per prediction: argmax over real classes with its
// probability as the score.
std::vector<Detection> to_detections(const std::vector<Prediction>& preds);

struct EvalReport {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap_s = 0.0;
  double ap_m = 0.0;
  double ap_l = 0.0;
};

// COCO-style AP: mean over IoU thresholds 0.50:0.05:0.95 of 101-point
// interpolated precision, averaged over classes with ground truth. Greedy
// matching by descending confidence, one match per ground-truth object.
// Size-bucket APs only consider buckets with ground truth; detections
// matched to an out-of-bucket object are ignored rather than counted as
// false positives. Empty buckets report NaN.
EvalReport evaluate_ap(const std::vector<std::vector<Detection>>& detections,
                       const std::vector<std::vector<LabeledObject>>& gts, int num_classes);

}  // namespace tsp
