#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tsp/analysis.hpp"
#include "tsp/config.hpp"

namespace tsp {

struct EpochRow {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_class = 0.0;
  double loss_l1 = 0.0;
  double loss_giou = 0.0;
  double loss_aux = 0.0;
  double instability = 0.0;
  int fallbacks = 0;
  EvalReport eval;
  std::vector<double> sparsity;  // aligned with sparsity_columns()
};

struct RunResult {
  std::string run_dir;
  std::string csv_path;
  std::string ckpt_path;
  std::vector<EpochRow> rows;
  EvalReport final_eval;
};

// Sparsity column names for a variant (per layer and attention kind).
std::vector<std::string> sparsity_columns(const ExperimentConfig& cfg);
std::string csv_header(const ExperimentConfig& cfg);

// Trains per config under out_dir/<name>/: writes train.csv, model.ckpt and
// the resolved config.txt. Fully reproducible from (config, seed).
RunResult run_train(const ExperimentConfig& cfg, const std::string& out_dir);

// Re-evaluates a checkpoint on the config's validation split.
EvalReport run_eval(const ExperimentConfig& cfg, const std::string& ckpt_path);

// Runs all configs (jobs in parallel), then writes aligned per-epoch AP
// curves to compare.csv and a line chart to compare.svg.
void run_compare(const std::vector<ExperimentConfig>& cfgs, const std::string& out_dir, int jobs);

// AP as a function of the FoI/RoI budget; writes sweep_k.csv (+ chart).
void run_sweep_k(const ExperimentConfig& cfg, const std::vector<int>& ks,
                 const std::string& out_dir, int jobs);

// Per-layer attention sparsity of a checkpoint over the validation split;
// writes kind,layer,sparsity rows.
void analyze_attention(const ExperimentConfig& cfg, const std::string& ckpt_path,
                       const std::string& out_csv);

// Minimal SVG line chart; never throws on plotting problems.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<double>& xs,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace tsp
