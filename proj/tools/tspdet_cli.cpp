// Command-line front end: training, evaluation, comparisons and the
// diagnostic sweeps, all driven by flat key=value config files.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsp/harness.hpp"

namespace {

constexpr const char* kCsvDoc =
    "train.csv columns: epoch,loss_total,loss_class,loss_l1,loss_giou,loss_aux,"
    "instability,fallbacks,ap,ap50,ap75,ap_s,ap_m,ap_l,sp_<kind>_l<i>...\n"
    "compare.csv columns: epoch,<run>_ap per run. sweep_k.csv columns: k,ap,ap_s,ap_m,ap_l.";

tsp::ExperimentConfig load_with_overrides(const std::string& path, const std::string& seed,
                                          const std::string& sparsity) {
  tsp::ExperimentConfig cfg = tsp::load_config(path);
  if (!seed.empty()) tsp::set_config_key(cfg, "seed", seed);
  if (!sparsity.empty()) tsp::set_config_key(cfg, "sparsity_variant", sparsity);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer set-prediction detection toy benchmark"};
  app.footer(kCsvDoc);
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", seed_override, sparsity_override, ckpt_path,
              teacher_path, attn_out;
  std::vector<std::string> config_paths;
  std::vector<int> k_values;
  int jobs = 1;

  CLI::App* train = app.add_subcommand("train", "train one detector per the config");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--seed", seed_override, "override the config seed");
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--sparsity-variant", sparsity_override, "paper|entropy");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  eval->add_option("--config", config_path, "config file")->required();
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--seed", seed_override, "override the config seed");
  eval->add_option("--sparsity-variant", sparsity_override, "paper|entropy");

  CLI::App* compare = app.add_subcommand("compare", "train several configs and align AP curves");
  compare->add_option("--config", config_paths, "config files")->required()->expected(-1);
  compare->add_option("--out", out_dir, "output directory");
  compare->add_option("--jobs", jobs, "parallel runs");
  compare->add_option("--seed", seed_override, "override every config seed");
  compare->add_option("--sparsity-variant", sparsity_override, "paper|entropy");

  CLI::App* sweep = app.add_subcommand("sweep-k", "AP as a function of the FoI/RoI budget");
  sweep->add_option("--config", config_path, "config file")->required();
  sweep->add_option("--k", k_values, "k values")->required()->expected(-1);
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--jobs", jobs, "parallel runs");
  sweep->add_option("--seed", seed_override, "override the config seed");

  CLI::App* attn = app.add_subcommand("analyze-attention", "per-layer attention sparsity");
  attn->add_option("--config", config_path, "config file")->required();
  attn->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  attn->add_option("--out", attn_out, "output csv (default stdout)");
  attn->add_option("--seed", seed_override, "override the config seed");
  attn->add_option("--sparsity-variant", sparsity_override, "paper|entropy");

  CLI::App* distill = app.add_subcommand("distill", "train with a frozen teacher matching");
  distill->add_option("--config", config_path, "config file")->required();
  distill->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  distill->add_option("--out", out_dir, "output directory");
  distill->add_option("--seed", seed_override, "override the config seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const tsp::ExperimentConfig cfg =
          load_with_overrides(config_path, seed_override, sparsity_override);
      const tsp::RunResult r = tsp::run_train(cfg, out_dir);
      std::printf("run_dir=%s final_ap=%.10g\n", r.run_dir.c_str(), r.final_eval.ap);
    } else if (eval->parsed()) {
      const tsp::ExperimentConfig cfg =
          load_with_overrides(config_path, seed_override, sparsity_override);
      const tsp::EvalReport r = tsp::run_eval(cfg, ckpt_path);
      std::printf("ap=%.10g ap50=%.10g ap75=%.10g ap_s=%.10g ap_m=%.10g ap_l=%.10g\n", r.ap,
                  r.ap50, r.ap75, r.ap_s, r.ap_m, r.ap_l);
    } else if (compare->parsed()) {
      std::vector<tsp::ExperimentConfig> cfgs;
      for (const std::string& p : config_paths) {
        cfgs.push_back(load_with_overrides(p, seed_override, sparsity_override));
      }
      tsp::run_compare(cfgs, out_dir, jobs);
      std::printf("wrote %s/compare.csv\n", out_dir.c_str());
    } else if (sweep->parsed()) {
      const tsp::ExperimentConfig cfg = load_with_overrides(config_path, seed_override, "");
      tsp::run_sweep_k(cfg, k_values, out_dir, jobs);
      std::printf("wrote %s/sweep_k.csv\n", out_dir.c_str());
    } else if (attn->parsed()) {
      const tsp::ExperimentConfig cfg =
          load_with_overrides(config_path, seed_override, sparsity_override);
      tsp::analyze_attention(cfg, ckpt_path, attn_out);
    } else if (distill->parsed()) {
      tsp::ExperimentConfig cfg = load_with_overrides(config_path, seed_override, "");
      tsp::set_config_key(cfg, "matcher", "distilled");
      tsp::set_config_key(cfg, "teacher_ckpt", teacher_path);
      const tsp::RunResult r = tsp::run_train(cfg, out_dir);
      std::printf("run_dir=%s final_ap=%.10g\n", r.run_dir.c_str(), r.final_eval.ap);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
