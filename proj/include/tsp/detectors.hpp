#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsp/autodiff.hpp"
#include "tsp/losses.hpp"
#include "tsp/matching.hpp"
#include "tsp/optimizer.hpp"
#include "tsp/synth.hpp"
#include "tsp/transformer.hpp"

namespace tsp {

enum class Variant { kDetr, kEncoderOnly, kTspFcos, kTspRcnn };
enum class MatcherScheme { kUnrestricted, kRestricted, kDistilled, kIndependent };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);
MatcherScheme matcher_from_string(const std::string& s);
std::string to_string(MatcherScheme m);

// A selected pyramid position (FoI) with its classifier score.
struct FeaturePoint {
  double x = 0.0;
  double y = 0.0;
  int level = 0;
  int cell = 0;  // global cell index across levels in scan order
  double objectness = 0.0;
};

struct Proposal {
  Box box;
  double objectness = 0.0;
  int level = 0;
  int cell = 0;
};

struct DetectorConfig {
  Variant variant = Variant::kTspFcos;
  EncoderConfig enc;
  int num_classes = 3;
  int n_queries = 25;     // decoder variant
  int k_select = 64;      // FoI / RoI count
  // Proposal-level greedy IoU dedup inside RoI selection (the RPN-stage
  // analog of proposal suppression in the two-stage lineage). Identical
  // proposals yield identical tokens, which a permutation-equivariant
  // encoder cannot tell apart, so some cap is structurally required.
  // Detection outputs are never suppressed. >= 1 disables.
  double rpn_dedup_iou = 0.8;
  double input_dropout = 0.7;
  bool pe_two_pi = false;
  std::vector<int> grid_sizes = {16, 8, 4};
  int feat_dim = 9;
};

struct DetectorOutput {
  std::vector<Prediction> predictions;  // detached view, aligned with rows below
  ad::Value logits;                     // n x (C+1)
  ad::Value probs;                      // row softmax of logits
  ad::Value boxes;                      // n x 4 decoded
  std::vector<AttentionMap> maps;
  // Token provenance for reference points / restricted matching.
  std::vector<FeaturePoint> points;     // encoder-only and TSP-FCOS
  std::vector<Proposal> proposals;      // TSP-RCNN
  // Selection-head outputs over all pyramid cells, for auxiliary training.
  ad::Value sel_scores;                 // cells x 1 objectness logits
  ad::Value rpn_boxes;                  // cells x 4 decoded proposals (TSP-RCNN)
};

// Indices of kept tokens: each kept independently with probability 1 - rate,
// with at least min_keep survivors (topped up by descending draw).
std::vector<int> input_dropout(int count, double rate, Rng& rng, int min_keep = 1);

// 2x2 bilinear samples inside the box on the level matched to the box size,
// flattened to 4 * feat_dim values, followed by the box's own (cx, cy, w, h).
// A zero-size box degenerates to its center sample.
std::vector<double> roi_feature_raw(const FeaturePyramid& pyr, const Box& box);

class Detector {
 public:
  Detector(DetectorConfig cfg, std::uint64_t init_seed);

  const DetectorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // dropout_rng must be set in training mode for the TSP variants.
  DetectorOutput forward(ad::Tape& t, ParamBinding& bind, const FeaturePyramid& pyr,
                         bool training, Rng* dropout_rng, int min_keep = 1);

  // Top-k scored positions / proposals, ties broken by scan order.
  std::vector<FeaturePoint> foi_select(const FeaturePyramid& pyr, int k);
  std::vector<Proposal> roi_select(const FeaturePyramid& pyr, int k);

  void save(const std::string& path) const { save_checkpoint(params_, path); }
  void load(const std::string& path) { load_checkpoint(params_, path); }

 private:
  friend struct DetectorTestPeer;
  DetectorConfig cfg_;
  ParamStore params_;
};

struct StepStats {
  double loss_total = 0.0;
  double loss_class = 0.0;
  double loss_l1 = 0.0;
  double loss_giou = 0.0;
  double loss_aux = 0.0;
  int fallbacks = 0;
  std::vector<Matching> matchings;  // one per scene; empty sigma for independent
};

// Forward, match, loss, backward, update for one scene. distilled supplies
// the frozen teacher assignment when the scheme is kDistilled.
StepStats train_step(Detector& det, const Scene& scene, const FeaturePyramid& pyr,
                     MatcherScheme scheme, const Matching* distilled, Optimizer& opt, Rng& rng,
                     const LossConfig& lcfg);

// Batch variant: gradients are averaged over scenes before one update.
StepStats train_batch(Detector& det, const std::vector<const Scene*>& scenes,
                      const std::vector<const FeaturePyramid*>& pyrs, MatcherScheme scheme,
                      const std::vector<const Matching*>* distilled, Optimizer& opt, Rng& rng,
                      const LossConfig& lcfg);

// Evaluation-mode forward on a scratch tape.
struct SceneDetections {
  std::vector<Prediction> predictions;
  std::vector<AttentionMap> maps;
  std::vector<FeaturePoint> points;
  std::vector<Proposal> proposals;
};
SceneDetections detect(Detector& det, const FeaturePyramid& pyr);

// The assignment the scheme would produce right now, from a deterministic
// eval-mode forward (used for instability probes). kDistilled callers use
// the teacher matching instead.
Matching eval_matching(Detector& det, const Scene& scene, const FeaturePyramid& pyr,
                       MatcherScheme scheme, const CostWeights& w, int* fallbacks = nullptr);

}  // namespace tsp
