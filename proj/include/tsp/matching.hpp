#pragma once

#include <vector>

#include "tsp/geometry.hpp"

namespace tsp {

// Sentinel for forbidden assignments. Kept finite so the solver stays in
// ordinary double arithmetic; feasibility is checked before solving.
inline constexpr double kForbiddenCost = 1e15;

// Square pairwise cost table. Row i is ground-truth slot i, column j is
// prediction j.
struct CostMatrix {
  int n = 0;
  std::vector<double> entries;  // n * n, row-major

  explicit CostMatrix(int size) : n(size), entries(static_cast<std::size_t>(size) * size, 0.0) {}
  double& at(int i, int j) { return entries[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return entries[static_cast<std::size_t>(i) * n + j]; }
};

// sigma[i] is the prediction index assigned to ground-truth slot i.
struct Matching {
  std::vector<int> sigma;
  double total_cost = 0.0;
};

// M real objects padded with no-object slots up to size n.
struct PaddedGroundTruth {
  std::vector<LabeledObject> objects;  // the M real objects
  int n = 0;

  static PaddedGroundTruth pad(std::vector<LabeledObject> objects, int n);
  int m() const { return static_cast<int>(objects.size()); }
  bool is_real(int slot) const { return slot < m(); }
};

// One class distribution (over C real classes plus trailing no-object) and a
// box, detached from any tape. This is the matching/eval-side view of a
// prediction.
struct Prediction {
  std::vector<double> probs;
  Box box;
};

struct CostWeights {
  double w_class = 1.0;
  double w_l1 = 5.0;
  double w_giou = 2.0;
};

// allowed[p][g]: may prediction p be assigned to real object g.
struct AdmissibilityMask {
  int n_pred = 0;
  int n_gt = 0;
  std::vector<char> allowed;

  AdmissibilityMask(int preds, int gts)
      : n_pred(preds), n_gt(gts), allowed(static_cast<std::size_t>(preds) * gts, 0) {}
  static AdmissibilityMask all_true(int preds, int gts);
  char& at(int p, int g) { return allowed[static_cast<std::size_t>(p) * n_gt + g]; }
  bool at(int p, int g) const { return allowed[static_cast<std::size_t>(p) * n_gt + g] != 0; }
  // Real objects with no admissible prediction.
  std::vector<int> starved_objects() const;
};

// Exact minimum-cost perfect matching, O(n^3). Throws InfeasibleMatchError
// (naming the unmatched rows) when no all-finite permutation exists.
Matching hungarian(const CostMatrix& c);

// Pairwise matching cost of one prediction against one ground-truth slot.
// No-object slots cost 0 against everything so padding never biases the
// assignment. Throws ContractError if probs is not a distribution.
double match_cost(const Prediction& pred, const PaddedGroundTruth& gts, int slot,
                  const CostWeights& w);

Matching optimal_match(const std::vector<Prediction>& preds, const PaddedGroundTruth& gts,
                       const CostWeights& w);

// A feature position plus its pyramid level; the minimal view the FCOS-rule
// admissibility needs.
struct MatchPoint {
  double x = 0.0;
  double y = 0.0;
  int level = 0;
};

// Per-level admissible range of max regression distance: level l covers
// (bound[l], bound[l+1]] with bounds 0, 0.1, 0.2, 0.4, ... capped at 1.
std::vector<double> level_range_bounds(int levels);

// FCOS rule: point must lie in the object's box and the point's level must
// admit the max side distance.
AdmissibilityMask fcos_admissibility(const std::vector<MatchPoint>& points,
                                     const PaddedGroundTruth& gts, int levels);

// Faster-RCNN rule: proposal box IoU with the object strictly above 0.5.
AdmissibilityMask rcnn_admissibility(const std::vector<Box>& proposals,
                                     const PaddedGroundTruth& gts);

// optimal_match with forbidden (prediction, object) pairs at kForbiddenCost.
// No-object slots admit every prediction. Throws InfeasibleMatchError listing
// starved objects if any real object has no admissible prediction or no
// perfect matching exists.
Matching restricted_match(const std::vector<Prediction>& preds, const PaddedGroundTruth& gts,
                          const AdmissibilityMask& mask, const CostWeights& w);

// Cost table used by optimal_match / restricted_match; exposed for reuse and
// testing. mask may be null (unrestricted).
CostMatrix build_cost_matrix(const std::vector<Prediction>& preds, const PaddedGroundTruth& gts,
                             const AdmissibilityMask* mask, const CostWeights& w);

}  // namespace tsp
