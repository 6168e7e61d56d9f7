#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tsp/errors.hpp"
#include "tsp/matching.hpp"
#include "tsp/rng.hpp"

using namespace tsp;

namespace {

// Exhaustive oracle over all permutations; ignores assignments touching
// forbidden entries.
double brute_force_min(const CostMatrix& c) {
  std::vector<int> perm(c.n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e301;
  do {
    double total = 0.0;
    bool ok = true;
    for (int i = 0; i < c.n && ok; ++i) {
      if (c.at(i, perm[i]) >= kForbiddenCost / 2) ok = false;
      total += c.at(i, perm[i]);
    }
    if (ok) best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

CostMatrix random_cost(int n, Rng& rng) {
  CostMatrix c(n);
  for (double& x : c.entries) x = rng.uniform(0.0, 10.0);
  return c;
}

Prediction make_pred(Rng& rng, int num_classes) {
  Prediction p;
  p.probs.resize(num_classes + 1);
  double total = 0.0;
  for (double& x : p.probs) {
    x = rng.uniform(0.01, 1.0);
    total += x;
  }
  for (double& x : p.probs) x /= total;
  p.box.w = rng.uniform(0.05, 0.5);
  p.box.h = rng.uniform(0.05, 0.5);
  p.box.cx = rng.uniform(p.box.w / 2, 1 - p.box.w / 2);
  p.box.cy = rng.uniform(p.box.h / 2, 1 - p.box.h / 2);
  return p;
}

LabeledObject make_object(Rng& rng, int num_classes) {
  LabeledObject o;
  o.category = rng.uniform_int(0, num_classes - 1);
  o.box.w = rng.uniform(0.05, 0.5);
  o.box.h = rng.uniform(0.05, 0.5);
  o.box.cx = rng.uniform(o.box.w / 2, 1 - o.box.w / 2);
  o.box.cy = rng.uniform(o.box.h / 2, 1 - o.box.h / 2);
  return o;
}

}  // namespace

TEST_CASE("hungarian solves the 2x2 example") {
  CostMatrix c(2);
  c.at(0, 0) = 1;
  c.at(0, 1) = 2;
  c.at(1, 0) = 2;
  c.at(1, 1) = 1;
  const Matching m = hungarian(c);
  CHECK(m.sigma[0] == 0);
  CHECK(m.sigma[1] == 1);
  CHECK(m.total_cost == doctest::Approx(2.0));
}

TEST_CASE("hungarian finds the zero diagonal") {
  CostMatrix c(3);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) c.at(i, j) = i == j ? 0.0 : 9.0;
  }
  const Matching m = hungarian(c);
  for (int i = 0; i < 3; ++i) CHECK(m.sigma[i] == i);
  CHECK(m.total_cost == doctest::Approx(0.0));
}

TEST_CASE("hungarian equals brute force on random matrices") {
  Rng rng(123);
  for (int n = 2; n <= 7; ++n) {
    for (int trial = 0; trial < 100; ++trial) {
      const CostMatrix c = random_cost(n, rng);
      const Matching m = hungarian(c);
      CHECK(m.total_cost == doctest::Approx(brute_force_min(c)).epsilon(1e-12));
      std::vector<char> seen(n, 0);
      for (int j : m.sigma) {
        CHECK_FALSE(seen[j]);
        seen[j] = 1;
      }
    }
  }
}

TEST_CASE("row-constant shifts move the cost but not the assignment") {
  Rng rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    const CostMatrix c = random_cost(5, rng);
    CostMatrix shifted = c;
    const double delta = rng.uniform(-3.0, 3.0);
    for (int j = 0; j < 5; ++j) shifted.at(2, j) += delta;
    const Matching m1 = hungarian(c);
    const Matching m2 = hungarian(shifted);
    CHECK(m1.sigma == m2.sigma);
    CHECK(m2.total_cost == doctest::Approx(m1.total_cost + delta).epsilon(1e-9));
  }
}

TEST_CASE("infeasible matrices raise with the unmatched rows") {
  CostMatrix c(3);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) c.at(i, j) = kForbiddenCost;
  }
  c.at(0, 0) = 1.0;
  c.at(1, 0) = 1.0;  // rows 0 and 1 compete for column 0; row 2 has nothing
  try {
    hungarian(c);
    FAIL("expected InfeasibleMatchError");
  } catch (const InfeasibleMatchError& e) {
    CHECK(!e.unmatched_rows.empty());
    for (int r : e.unmatched_rows) CHECK((r >= 0 && r < 3));
  }
}

TEST_CASE("match_cost composes class, l1 and giou terms") {
  Rng rng(58);
  const CostWeights w{1.0, 1.0, 1.0};
  for (int trial = 0; trial < 50; ++trial) {
    const Prediction p = make_pred(rng, 3);
    const LabeledObject o = make_object(rng, 3);
    const PaddedGroundTruth g = PaddedGroundTruth::pad({o}, 4);
    const double expect = (1.0 - p.probs[o.category]) +
                          (std::abs(p.box.cx - o.box.cx) + std::abs(p.box.cy - o.box.cy) +
                           std::abs(p.box.w - o.box.w) + std::abs(p.box.h - o.box.h)) +
                          (1.0 - giou(p.box, o.box));
    CHECK(match_cost(p, g, 0, w) == doctest::Approx(expect).epsilon(1e-12));
    // padding slots are free
    CHECK(match_cost(p, g, 1, w) == 0.0);
  }
}

TEST_CASE("match_cost of a perfect prediction is 0") {
  LabeledObject o;
  o.category = 1;
  o.box = Box{0.5, 0.5, 0.2, 0.2};
  Prediction p;
  p.probs = {0.0, 1.0, 0.0, 0.0};
  p.box = o.box;
  const PaddedGroundTruth g = PaddedGroundTruth::pad({o}, 2);
  CHECK(match_cost(p, g, 0, CostWeights{1, 1, 1}) == doctest::Approx(0.0));
}

TEST_CASE("match_cost rejects unnormalized distributions") {
  LabeledObject o;
  o.box = Box{0.5, 0.5, 0.2, 0.2};
  Prediction p;
  p.probs = {0.5, 0.2, 0.2, 0.2};
  p.box = o.box;
  const PaddedGroundTruth g = PaddedGroundTruth::pad({o}, 1);
  CHECK_THROWS_AS(match_cost(p, g, 0, CostWeights{}), ContractError);
}

TEST_CASE("optimal_match equals brute force on constructed instances") {
  Rng rng(99);
  const CostWeights w;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(2, 6);
    const int m = rng.uniform_int(1, n);
    std::vector<Prediction> preds;
    for (int i = 0; i < n; ++i) preds.push_back(make_pred(rng, 3));
    std::vector<LabeledObject> objs;
    for (int i = 0; i < m; ++i) objs.push_back(make_object(rng, 3));
    const PaddedGroundTruth gts = PaddedGroundTruth::pad(objs, n);
    const Matching got = hungarian(build_cost_matrix(preds, gts, nullptr, w));
    const Matching via_op = optimal_match(preds, gts, w);
    CHECK(got.total_cost ==
          doctest::Approx(brute_force_min(build_cost_matrix(preds, gts, nullptr, w)))
              .epsilon(1e-12));
    CHECK(via_op.total_cost == doctest::Approx(got.total_cost).epsilon(1e-12));
  }
}

TEST_CASE("perfect one-object scene matches the perfect prediction") {
  LabeledObject o;
  o.category = 0;
  o.box = Box{0.4, 0.6, 0.2, 0.3};
  std::vector<Prediction> preds(3);
  for (Prediction& p : preds) {
    p.probs = {0.05, 0.05, 0.05, 0.85};
    p.box = Box{0.8, 0.2, 0.1, 0.1};
  }
  preds[2].probs = {0.9, 0.04, 0.03, 0.03};
  preds[2].box = o.box;
  const Matching m = optimal_match(preds, PaddedGroundTruth::pad({o}, 3), CostWeights{});
  CHECK(m.sigma[0] == 2);
}

TEST_CASE("all-padding ground truth yields a zero-cost bijection") {
  Rng rng(7);
  std::vector<Prediction> preds;
  for (int i = 0; i < 4; ++i) preds.push_back(make_pred(rng, 3));
  const Matching m = optimal_match(preds, PaddedGroundTruth::pad({}, 4), CostWeights{});
  CHECK(m.total_cost == doctest::Approx(0.0));
  std::vector<char> seen(4, 0);
  for (int j : m.sigma) {
    CHECK_FALSE(seen[j]);
    seen[j] = 1;
  }
}

TEST_CASE("optimal_match pairs are stable under prediction permutation") {
  Rng rng(200);
  const CostWeights w;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Prediction> preds;
    for (int i = 0; i < 5; ++i) preds.push_back(make_pred(rng, 3));
    std::vector<LabeledObject> objs;
    for (int i = 0; i < 3; ++i) objs.push_back(make_object(rng, 3));
    const PaddedGroundTruth gts = PaddedGroundTruth::pad(objs, 5);
    const Matching m1 = optimal_match(preds, gts, w);

    std::vector<Prediction> shuffled = preds;
    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 4; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    for (int i = 0; i < 5; ++i) shuffled[perm[i]] = preds[i];
    const Matching m2 = optimal_match(shuffled, gts, w);

    for (int g = 0; g < 3; ++g) {
      const Prediction& a = preds[m1.sigma[g]];
      const Prediction& b = shuffled[m2.sigma[g]];
      CHECK(a.box.cx == doctest::Approx(b.box.cx));
      CHECK(a.probs[0] == doctest::Approx(b.probs[0]));
    }
  }
}

TEST_CASE("level range bounds follow the doubling ladder") {
  const std::vector<double> b5 = level_range_bounds(5);
  const std::vector<double> want = {0.0, 0.1, 0.2, 0.4, 0.8, 1.0};
  REQUIRE(b5.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(b5[i] == doctest::Approx(want[i]));
  const std::vector<double> b3 = level_range_bounds(3);
  CHECK(b3[1] == doctest::Approx(0.1));
  CHECK(b3[2] == doctest::Approx(0.2));
  CHECK(b3[3] == doctest::Approx(1.0));
}

TEST_CASE("fcos admissibility needs containment and a matching level") {
  LabeledObject big;
  big.box = from_corner(0.2, 0.2, 0.8, 0.8);  // max distance from center 0.3
  const PaddedGroundTruth gts = PaddedGroundTruth::pad({big}, 2);

  // level 2 of 3 admits (0.2, 1.0]
  CHECK(fcos_admissibility({{0.5, 0.5, 2}}, gts, 3).at(0, 0));
  CHECK_FALSE(fcos_admissibility({{0.9, 0.9, 2}}, gts, 3).at(0, 0));  // outside

  LabeledObject small;
  small.box = Box{0.5, 0.5, 0.1, 0.1};  // max distance 0.05, level 0 range (0, 0.1]
  const PaddedGroundTruth gts2 = PaddedGroundTruth::pad({small}, 2);
  CHECK(fcos_admissibility({{0.5, 0.5, 0}}, gts2, 3).at(0, 0));
  CHECK_FALSE(fcos_admissibility({{0.5, 0.5, 2}}, gts2, 3).at(0, 0));  // coarsest level
}

TEST_CASE("rcnn admissibility is strict at 0.5") {
  LabeledObject o;
  o.box = Box{0.25, 0.25, 0.5, 0.5};
  const PaddedGroundTruth gts = PaddedGroundTruth::pad({o}, 1);

  CHECK(rcnn_admissibility({o.box}, gts).at(0, 0));
  // Exactly IoU 0.5 (dyadic arithmetic): half-width box inside.
  const Box half{0.125, 0.25, 0.25, 0.5};
  CHECK(iou(half, o.box) == 0.5);
  CHECK_FALSE(rcnn_admissibility({half}, gts).at(0, 0));
  const Box far{0.9, 0.9, 0.1, 0.1};
  CHECK_FALSE(rcnn_admissibility({far}, gts).at(0, 0));
}

TEST_CASE("restricted_match with an all-true mask reduces to optimal_match") {
  Rng rng(301);
  const CostWeights w;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(2, 6);
    const int m = rng.uniform_int(1, n);
    std::vector<Prediction> preds;
    for (int i = 0; i < n; ++i) preds.push_back(make_pred(rng, 3));
    std::vector<LabeledObject> objs;
    for (int i = 0; i < m; ++i) objs.push_back(make_object(rng, 3));
    const PaddedGroundTruth gts = PaddedGroundTruth::pad(objs, n);
    const Matching a = optimal_match(preds, gts, w);
    const Matching b = restricted_match(preds, gts, AdmissibilityMask::all_true(n, m), w);
    CHECK(a.total_cost == doctest::Approx(b.total_cost).epsilon(1e-12));
  }
}

TEST_CASE("a single admissible prediction per object is forced") {
  Rng rng(302);
  std::vector<Prediction> preds;
  for (int i = 0; i < 4; ++i) preds.push_back(make_pred(rng, 3));
  std::vector<LabeledObject> objs = {make_object(rng, 3), make_object(rng, 3)};
  const PaddedGroundTruth gts = PaddedGroundTruth::pad(objs, 4);
  AdmissibilityMask mask(4, 2);
  mask.at(3, 0) = 1;
  mask.at(1, 1) = 1;
  const Matching m = restricted_match(preds, gts, mask, CostWeights{});
  CHECK(m.sigma[0] == 3);
  CHECK(m.sigma[1] == 1);
}

TEST_CASE("restricted_match equals masked brute force on random 5x5 instances") {
  Rng rng(303);
  const CostWeights w;
  int feasible_seen = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Prediction> preds;
    for (int i = 0; i < 5; ++i) preds.push_back(make_pred(rng, 3));
    std::vector<LabeledObject> objs;
    for (int i = 0; i < 3; ++i) objs.push_back(make_object(rng, 3));
    const PaddedGroundTruth gts = PaddedGroundTruth::pad(objs, 5);
    AdmissibilityMask mask(5, 3);
    for (char& c : mask.allowed) c = rng.uniform01() < 0.6 ? 1 : 0;
    if (!mask.starved_objects().empty()) {
      CHECK_THROWS_AS(restricted_match(preds, gts, mask, w), InfeasibleMatchError);
      continue;
    }
    const CostMatrix cm = build_cost_matrix(preds, gts, &mask, w);
    const double oracle = brute_force_min(cm);
    if (oracle > 1e300) continue;  // no feasible permutation at all
    ++feasible_seen;
    const Matching m = restricted_match(preds, gts, mask, w);
    CHECK(m.total_cost == doctest::Approx(oracle).epsilon(1e-12));
    for (int g = 0; g < 3; ++g) CHECK(mask.at(m.sigma[g], g));
  }
  CHECK(feasible_seen > 50);
}

TEST_CASE("restricted_match reports starved objects by index") {
  Rng rng(304);
  std::vector<Prediction> preds;
  for (int i = 0; i < 3; ++i) preds.push_back(make_pred(rng, 3));
  std::vector<LabeledObject> objs = {make_object(rng, 3), make_object(rng, 3)};
  const PaddedGroundTruth gts = PaddedGroundTruth::pad(objs, 3);
  AdmissibilityMask mask(3, 2);
  mask.at(0, 0) = 1;  // object 1 starves
  try {
    restricted_match(preds, gts, mask, CostWeights{});
    FAIL("expected InfeasibleMatchError");
  } catch (const InfeasibleMatchError& e) {
    REQUIRE(e.unmatched_rows.size() == 1);
    CHECK(e.unmatched_rows[0] == 1);
  }
}
