#pragma once

#include <cstdint>
#include <string>

#include "tsp/detectors.hpp"
#include "tsp/losses.hpp"
#include "tsp/optimizer.hpp"
#include "tsp/synth.hpp"

namespace tsp {

// Flat key=value experiment description. variant, matcher, epochs and seed
// are required; everything else has defaults. Unknown keys are rejected.
struct ExperimentConfig {
  std::string name = "run";
  Variant variant = Variant::kTspFcos;
  MatcherScheme matcher = MatcherScheme::kUnrestricted;
  int epochs = 0;
  std::uint64_t seed = 0;

  int batch_size = 8;
  int train_scenes = 128;
  int val_scenes = 64;
  int probe_scenes = 16;
  std::uint64_t train_seed_base = 0;
  std::uint64_t val_seed_base = 10000;

  double lr = 1e-3;
  double weight_decay = 1e-4;
  double clip_norm = 0.1;
  bool split_optimizer = false;
  double sgd_lr = 1e-2;
  double momentum = 0.9;

  int layers = 3;
  int d_model = 64;
  int heads = 4;
  int d_ffn = 128;
  int n_queries = 25;
  int k = 64;
  double rpn_dedup_iou = 0.8;
  double input_dropout = 0.7;
  bool pe_two_pi = false;

  double w_class = 1.0;
  double w_l1 = 5.0;
  double w_giou = 2.0;
  double focal_alpha = 0.75;
  double focal_gamma = 2.0;

  int num_classes = 3;
  double noise = 0.02;
  double p_small = 0.4;
  double p_medium = 0.4;
  double p_large = 0.2;
  int min_objects = 1;
  int max_objects = 8;

  std::string sparsity_variant = "paper";  // paper | entropy
  std::string teacher_ckpt;

  DetectorConfig detector_config() const;
  SynthConfig synth_config() const;
  LossConfig loss_config() const;
  OptimConfig optim_config() const;
};

// Parses "key = value" lines; '#' starts a comment. Throws ConfigError for
// unknown keys, bad values, or missing required keys.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Single-key override (CLI flags reuse the same key names).
void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Every key, resolved, one per line, in canonical order.
std::string serialize_config(const ExperimentConfig& cfg);

// Cross-field checks (matcher/variant compatibility, dimensions, ranges).
void validate_config(const ExperimentConfig& cfg);

}  // namespace tsp
