#include "tsp/analysis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "tsp/errors.hpp"
#include "tsp/synth.hpp"

namespace tsp {

double attention_sparsity(const AttentionMap& map, const std::vector<char>* target_mask,
                          bool paper_prefactor) {
  if (map.head_weights.empty()) throw ContractError("attention_sparsity: empty map");
  double acc = 0.0;
  int rows_counted = 0;
  for (const Tensor& head : map.head_weights) {
    if (target_mask != nullptr && static_cast<int>(target_mask->size()) != head.cols) {
      throw ContractError("attention_sparsity: mask length mismatch");
    }
    int m = 0;
    for (int j = 0; j < head.cols; ++j) {
      if (target_mask == nullptr || !(*target_mask)[j]) ++m;
    }
    if (m == 0) throw ContractError("attention_sparsity: all targets masked");
    for (int i = 0; i < head.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < head.cols; ++j) {
        if (target_mask != nullptr && (*target_mask)[j]) continue;
        const double p = head.at(i, j);
        if (p > 0.0) s += p * std::log(p);
      }
      acc += paper_prefactor ? s / m : s;
      ++rows_counted;
    }
  }
  return acc / rows_counted;
}

double matching_instability(const Matching& prev, const Matching& curr, int m_real) {
  if (prev.sigma.size() != curr.sigma.size()) {
    throw ContractError("matching_instability: size mismatch");
  }
  if (m_real < 0 || m_real > static_cast<int>(prev.sigma.size())) {
    throw ContractError("matching_instability: bad object count");
  }
  if (m_real == 0) return 0.0;
  int changed = 0;
  for (int i = 0; i < m_real; ++i) {
    if (prev.sigma[i] != curr.sigma[i]) ++changed;
  }
  return static_cast<double>(changed) / m_real;
}

Matching distill_matching(Detector& teacher, const Scene& scene, const FeaturePyramid& pyr,
                          const CostWeights& w) {
  return eval_matching(teacher, scene, pyr, MatcherScheme::kUnrestricted, w);
}

namespace {

struct Scored {
  int category = -1;
  double score = 0.0;
};

Scored top_real_class(const Prediction& p) {
  Scored s;
  const int c_real = static_cast<int>(p.probs.size()) - 1;
  for (int c = 0; c < c_real; ++c) {
    if (p.probs[c] > s.score) {
      s.score = p.probs[c];
      s.category = c;
    }
  }
  return s;
}

}  // namespace

double duplicate_rate(const std::vector<Prediction>& preds, double conf_threshold,
                      double iou_threshold) {
  std::vector<int> confident;
  std::vector<Scored> scored(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    scored[i] = top_real_class(preds[i]);
    if (scored[i].score >= conf_threshold) confident.push_back(static_cast<int>(i));
  }
  if (confident.empty()) return 0.0;
  int in_pair = 0;
  for (std::size_t a = 0; a < confident.size(); ++a) {
    bool dup = false;
    for (std::size_t b = 0; b < confident.size() && !dup; ++b) {
      if (a == b) continue;
      const int i = confident[a], j = confident[b];
      if (scored[i].category == scored[j].category &&
          iou(preds[i].box, preds[j].box) > iou_threshold) {
        dup = true;
      }
    }
    if (dup) ++in_pair;
  }
  return static_cast<double>(in_pair) / confident.size();
}

std::vector<Detection> to_detections(const std::vector<Prediction>& preds) {
  std::vector<Detection> out;
  out.reserve(preds.size());
  for (const Prediction& p : preds) {
    const Scored s = top_real_class(p);
    if (s.category < 0) continue;
    out.push_back({p.box, s.category, s.score});
  }
  return out;
}

namespace {

constexpr int kRecallPoints = 101;

struct DetRef {
  int scene = 0;
  int index = 0;
  double score = 0.0;
};

// 101-point interpolated AP from (is_tp, in order of descending score) plus
// the number of positives.
double interp_ap(const std::vector<char>& tp_flags, int n_gt) {
  if (n_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> precis;
  std::vector<double> recall;
  int tp = 0, fp = 0;
  for (char f : tp_flags) {
    if (f) {
      ++tp;
    } else {
      ++fp;
    }
    precis.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / n_gt);
  }
  // Monotone envelope from the right.
  for (int i = static_cast<int>(precis.size()) - 2; i >= 0; --i) {
    precis[i] = std::max(precis[i], precis[i + 1]);
  }
  double ap = 0.0;
  std::size_t pos = 0;
  for (int r = 0; r < kRecallPoints; ++r) {
    const double want = static_cast<double>(r) / (kRecallPoints - 1);
    while (pos < recall.size() && recall[pos] < want - 1e-12) ++pos;
    if (pos < precis.size()) ap += precis[pos];
  }
  return ap / kRecallPoints;
}

}  // namespace

EvalReport evaluate_ap(const std::vector<std::vector<Detection>>& detections,
                       const std::vector<std::vector<LabeledObject>>& gts, int num_classes) {
  if (detections.size() != gts.size()) throw ContractError("evaluate_ap: scene count mismatch");
  const int num_scenes = static_cast<int>(gts.size());

  std::vector<double> thresholds;
  for (int i = 0; i < 10; ++i) thresholds.push_back(0.5 + 0.05 * i);

  // Buckets: 0 = all, 1..3 = small/medium/large.
  auto bucket_of = [](const Box& b) { return static_cast<int>(size_bucket(b.area())) + 1; };

  // accum[bucket] = per-threshold sums over classes, plus class counts.
  std::array<std::vector<double>, 4> ap_sums;
  std::array<std::vector<int>, 4> ap_counts;
  for (int b = 0; b < 4; ++b) {
    ap_sums[b].assign(thresholds.size(), 0.0);
    ap_counts[b].assign(thresholds.size(), 0);
  }

  for (int cls = 0; cls < num_classes; ++cls) {
    std::vector<DetRef> dets;
    for (int s = 0; s < num_scenes; ++s) {
      for (int d = 0; d < static_cast<int>(detections[s].size()); ++d) {
        if (detections[s][d].category == cls) dets.push_back({s, d, detections[s][d].score});
      }
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const DetRef& a, const DetRef& b) { return a.score > b.score; });

    std::vector<std::vector<int>> gt_idx(num_scenes);
    int n_gt_bucket[4] = {0, 0, 0, 0};
    for (int s = 0; s < num_scenes; ++s) {
      for (int g = 0; g < static_cast<int>(gts[s].size()); ++g) {
        if (gts[s][g].category != cls) continue;
        gt_idx[s].push_back(g);
        ++n_gt_bucket[0];
        ++n_gt_bucket[bucket_of(gts[s][g].box)];
      }
    }

    for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
      const double thr = thresholds[ti];
      std::vector<std::vector<char>> taken(num_scenes);
      for (int s = 0; s < num_scenes; ++s) taken[s].assign(gt_idx[s].size(), 0);

      // matched_bucket[d]: 0 = unmatched (FP), else bucket of matched gt.
      std::vector<int> matched_bucket(dets.size(), 0);
      for (std::size_t d = 0; d < dets.size(); ++d) {
        const Detection& det = detections[dets[d].scene][dets[d].index];
        double best = thr;
        int best_g = -1;
        for (std::size_t gi = 0; gi < gt_idx[dets[d].scene].size(); ++gi) {
          if (taken[dets[d].scene][gi]) continue;
          const Box& gbox = gts[dets[d].scene][gt_idx[dets[d].scene][gi]].box;
          const double ov = iou(det.box, gbox);
          if (ov >= best) {
            best = ov;
            best_g = static_cast<int>(gi);
          }
        }
        if (best_g >= 0) {
          taken[dets[d].scene][best_g] = 1;
          matched_bucket[d] =
              bucket_of(gts[dets[d].scene][gt_idx[dets[d].scene][best_g]].box);
        }
      }

      for (int b = 0; b < 4; ++b) {
        if (n_gt_bucket[b] == 0) continue;
        std::vector<char> flags;
        flags.reserve(dets.size());
        for (std::size_t d = 0; d < dets.size(); ++d) {
          if (matched_bucket[d] == 0) {
            flags.push_back(0);  // unmatched detection counts as FP everywhere
          } else if (b == 0 || matched_bucket[d] == b) {
            flags.push_back(1);
          }
          // matched to an out-of-bucket object: ignored for this bucket
        }
        ap_sums[b][ti] += interp_ap(flags, n_gt_bucket[b]);
        ap_counts[b][ti] += 1;
      }
    }
  }

  auto mean_over_thresholds = [&](int b) {
    double acc = 0.0;
    int n = 0;
    for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
      if (ap_counts[b][ti] == 0) continue;
      acc += ap_sums[b][ti] / ap_counts[b][ti];
      ++n;
    }
    return n > 0 ? acc / n : std::numeric_limits<double>::quiet_NaN();
  };
  auto at_threshold = [&](int b, std::size_t ti) {
    return ap_counts[b][ti] > 0 ? ap_sums[b][ti] / ap_counts[b][ti]
                                : std::numeric_limits<double>::quiet_NaN();
  };

  EvalReport rep;
  rep.ap = mean_over_thresholds(0);
  rep.ap50 = at_threshold(0, 0);
  rep.ap75 = at_threshold(0, 5);
  rep.ap_s = mean_over_thresholds(1);
  rep.ap_m = mean_over_thresholds(2);
  rep.ap_l = mean_over_thresholds(3);
  return rep;
}

}  // namespace tsp
