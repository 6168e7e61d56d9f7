#include "tsp/matching.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tsp/errors.hpp"

namespace tsp {

PaddedGroundTruth PaddedGroundTruth::pad(std::vector<LabeledObject> objects, int n) {
  if (static_cast<int>(objects.size()) > n) {
    throw ContractError("PaddedGroundTruth: more objects than slots");
  }
  PaddedGroundTruth g;
  g.objects = std::move(objects);
  g.n = n;
  return g;
}

AdmissibilityMask AdmissibilityMask::all_true(int preds, int gts) {
  AdmissibilityMask m(preds, gts);
  std::fill(m.allowed.begin(), m.allowed.end(), 1);
  return m;
}

std::vector<int> AdmissibilityMask::starved_objects() const {
  std::vector<int> starved;
  for (int g = 0; g < n_gt; ++g) {
    bool any = false;
    for (int p = 0; p < n_pred && !any; ++p) any = at(p, g);
    if (!any) starved.push_back(g);
  }
  return starved;
}

namespace {

bool finite_cost(double c) { return c < kForbiddenCost / 2.0; }

// Kuhn's augmenting-path matching on the finite-cost graph; returns rows that
// cannot be covered by any perfect matching.
std::vector<int> uncoverable_rows(const CostMatrix& c) {
  const int n = c.n;
  std::vector<int> col_match(n, -1);
  std::vector<int> row_match(n, -1);
  std::vector<char> visited(n);

  auto try_row = [&](auto&& self, int i) -> bool {
    for (int j = 0; j < n; ++j) {
      if (visited[j] || !finite_cost(c.at(i, j))) continue;
      visited[j] = 1;
      if (col_match[j] < 0 || self(self, col_match[j])) {
        col_match[j] = i;
        row_match[i] = j;
        return true;
      }
    }
    return false;
  };

  std::vector<int> unmatched;
  for (int i = 0; i < n; ++i) {
    std::fill(visited.begin(), visited.end(), 0);
    if (!try_row(try_row, i)) unmatched.push_back(i);
  }
  return unmatched;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

Matching hungarian(const CostMatrix& c) {
  const int n = c.n;
  if (n <= 0) throw ContractError("hungarian: empty cost matrix");

  {
    const std::vector<int> bad = uncoverable_rows(c);
    if (!bad.empty()) {
      throw InfeasibleMatchError("hungarian: no finite-cost perfect matching; unmatched rows " +
                                     join_ints(bad),
                                 bad);
    }
  }

  // Potentials / shortest augmenting path formulation, 1-indexed internally.
  const double kInf = 1e300;
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Matching m;
  m.sigma.assign(n, -1);
  for (int j = 1; j <= n; ++j) m.sigma[p[j] - 1] = j - 1;
  m.total_cost = 0.0;
  for (int i = 0; i < n; ++i) m.total_cost += c.at(i, m.sigma[i]);
  return m;
}

double match_cost(const Prediction& pred, const PaddedGroundTruth& gts, int slot,
                  const CostWeights& w) {
  if (slot < 0 || slot >= gts.n) throw ContractError("match_cost: slot out of range");
  if (!gts.is_real(slot)) return 0.0;

  if (pred.probs.size() < 2) throw ContractError("match_cost: class distribution too short");
  double total = 0.0;
  for (double p : pred.probs) {
    if (p < -1e-9) throw ContractError("match_cost: negative class probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("match_cost: class distribution does not sum to 1");
  }

  const LabeledObject& obj = gts.objects[slot];
  if (obj.category < 0 || obj.category >= static_cast<int>(pred.probs.size()) - 1) {
    throw ContractError("match_cost: category out of range");
  }
  const double cls = 1.0 - pred.probs[obj.category];
  const double l1 = std::abs(pred.box.cx - obj.box.cx) + std::abs(pred.box.cy - obj.box.cy) +
                    std::abs(pred.box.w - obj.box.w) + std::abs(pred.box.h - obj.box.h);
  return w.w_class * cls + w.w_l1 * l1 + w.w_giou * (1.0 - giou(pred.box, obj.box));
}

CostMatrix build_cost_matrix(const std::vector<Prediction>& preds, const PaddedGroundTruth& gts,
                             const AdmissibilityMask* mask, const CostWeights& w) {
  const int n = gts.n;
  if (static_cast<int>(preds.size()) != n) {
    throw ContractError("cost matrix: prediction count must equal padded size");
  }
  if (mask != nullptr && (mask->n_pred != n || mask->n_gt != gts.m())) {
    throw ContractError("cost matrix: mask shape mismatch");
  }
  CostMatrix c(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (gts.is_real(i) && mask != nullptr && !mask->at(j, i)) {
        c.at(i, j) = kForbiddenCost;
      } else {
        c.at(i, j) = match_cost(preds[j], gts, i, w);
      }
    }
  }
  return c;
}

Matching optimal_match(const std::vector<Prediction>& preds, const PaddedGroundTruth& gts,
                       const CostWeights& w) {
  return hungarian(build_cost_matrix(preds, gts, nullptr, w));
}

std::vector<double> level_range_bounds(int levels) {
  if (levels <= 0) throw ContractError("level_range_bounds: need at least one level");
  std::vector<double> bounds(levels + 1, 0.0);
  for (int j = 1; j < levels; ++j) bounds[j] = std::min(0.1 * std::pow(2.0, j - 1), 1.0);
  bounds[levels] = 1.0;
  return bounds;
}

AdmissibilityMask fcos_admissibility(const std::vector<MatchPoint>& points,
                                     const PaddedGroundTruth& gts, int levels) {
  const std::vector<double> bounds = level_range_bounds(levels);
  AdmissibilityMask mask(static_cast<int>(points.size()), gts.m());
  for (int p = 0; p < mask.n_pred; ++p) {
    const MatchPoint& pt = points[p];
    if (pt.level < 0 || pt.level >= levels) throw ContractError("fcos_admissibility: bad level");
    for (int g = 0; g < mask.n_gt; ++g) {
      const Box& box = gts.objects[g].box;
      if (!contains(pt.x, pt.y, box)) continue;
      const double dist = max_regression_distance(pt.x, pt.y, box);
      if (dist > bounds[pt.level] && dist <= bounds[pt.level + 1]) mask.at(p, g) = 1;
    }
  }
  return mask;
}

AdmissibilityMask rcnn_admissibility(const std::vector<Box>& proposals,
                                     const PaddedGroundTruth& gts) {
  AdmissibilityMask mask(static_cast<int>(proposals.size()), gts.m());
  for (int p = 0; p < mask.n_pred; ++p) {
    for (int g = 0; g < mask.n_gt; ++g) {
      if (iou(proposals[p], gts.objects[g].box) > 0.5) mask.at(p, g) = 1;
    }
  }
  return mask;
}

Matching restricted_match(const std::vector<Prediction>& preds, const PaddedGroundTruth& gts,
                          const AdmissibilityMask& mask, const CostWeights& w) {
  const std::vector<int> starved = mask.starved_objects();
  if (!starved.empty()) {
    throw InfeasibleMatchError(
        "restricted_match: objects with no admissible prediction: " + join_ints(starved), starved);
  }
  return hungarian(build_cost_matrix(preds, gts, &mask, w));
}

}  // namespace tsp
