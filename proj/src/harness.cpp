#include "tsp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "tsp/errors.hpp"

namespace tsp {

namespace fs = std::filesystem;

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

struct MapKey {
  AttentionMap::Kind kind;
  int layer;
  bool operator<(const MapKey& o) const {
    if (kind != o.kind) return kind < o.kind;
    return layer < o.layer;
  }
};

std::string kind_name(AttentionMap::Kind k, bool decoder_present, bool is_decoder_map) {
  if (!decoder_present) return "enc_self";
  if (!is_decoder_map) return "enc_self";
  return k == AttentionMap::Kind::kSelf ? "dec_self" : "dec_cross";
}

}  // namespace

std::vector<std::string> sparsity_columns(const ExperimentConfig& cfg) {
  std::vector<std::string> cols;
  for (int l = 0; l < cfg.layers; ++l) cols.push_back("sp_enc_self_l" + std::to_string(l));
  if (cfg.variant == Variant::kDetr) {
    for (int l = 0; l < cfg.layers; ++l) cols.push_back("sp_dec_self_l" + std::to_string(l));
    for (int l = 0; l < cfg.layers; ++l) cols.push_back("sp_dec_cross_l" + std::to_string(l));
  }
  return cols;
}

std::string csv_header(const ExperimentConfig& cfg) {
  std::string h =
      "epoch,loss_total,loss_class,loss_l1,loss_giou,loss_aux,instability,fallbacks,"
      "ap,ap50,ap75,ap_s,ap_m,ap_l";
  for (const std::string& c : sparsity_columns(cfg)) h += "," + c;
  return h;
}

namespace {

std::string row_to_csv(const EpochRow& r) {
  std::string line = std::to_string(r.epoch);
  for (double v : {r.loss_total, r.loss_class, r.loss_l1, r.loss_giou, r.loss_aux, r.instability}) {
    line += "," + fmt(v);
  }
  line += "," + std::to_string(r.fallbacks);
  for (double v : {r.eval.ap, r.eval.ap50, r.eval.ap75, r.eval.ap_s, r.eval.ap_m, r.eval.ap_l}) {
    line += "," + fmt(v);
  }
  for (double v : r.sparsity) line += "," + fmt(v);
  return line;
}

struct Datasets {
  std::vector<Scene> train, val;
  std::vector<FeaturePyramid> train_pyr, val_pyr;
};

Datasets build_datasets(const ExperimentConfig& cfg) {
  const SynthConfig sc = cfg.synth_config();
  Datasets d;
  d.train.reserve(cfg.train_scenes);
  for (int i = 0; i < cfg.train_scenes; ++i) {
    d.train.push_back(scene_for_seed(cfg.train_seed_base + i, sc));
    d.train_pyr.push_back(featurize(d.train.back(), sc));
  }
  d.val.reserve(cfg.val_scenes);
  for (int i = 0; i < cfg.val_scenes; ++i) {
    d.val.push_back(scene_for_seed(cfg.val_seed_base + i, sc));
    d.val_pyr.push_back(featurize(d.val.back(), sc));
  }
  return d;
}

// Mean sparsity per (kind, layer) over the validation stream plus the AP
// report, from one pass.
struct ValSummary {
  EvalReport eval;
  std::vector<double> sparsity;
};

ValSummary evaluate_on_val(Detector& det, const Datasets& data, const ExperimentConfig& cfg) {
  const bool prefactor = cfg.sparsity_variant == "paper";
  const bool has_decoder = cfg.variant == Variant::kDetr;

  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<LabeledObject>> gts;
  std::map<std::string, std::pair<double, int>> sp;
  for (std::size_t i = 0; i < data.val.size(); ++i) {
    SceneDetections sd = detect(det, data.val_pyr[i]);
    dets.push_back(to_detections(sd.predictions));
    gts.push_back(data.val[i].objects);
    // Encoder maps come first in the output; with a decoder, each layer also
    // contributes a self and a cross map.
    const int enc_layers = cfg.layers;
    for (std::size_t m = 0; m < sd.maps.size(); ++m) {
      const bool is_dec = has_decoder && static_cast<int>(m) >= enc_layers;
      const std::string key = kind_name(sd.maps[m].kind, has_decoder, is_dec) + "_l" +
                              std::to_string(sd.maps[m].layer);
      auto& acc = sp[key];
      acc.first += attention_sparsity(sd.maps[m], nullptr, prefactor);
      acc.second += 1;
    }
  }

  ValSummary out;
  out.eval = evaluate_ap(dets, gts, cfg.num_classes);
  for (const std::string& col : sparsity_columns(cfg)) {
    const std::string key = col.substr(3);  // strip "sp_"
    auto it = sp.find(key);
    out.sparsity.push_back(it == sp.end() ? 0.0 : it->second.first / it->second.second);
  }
  return out;
}

}  // namespace

RunResult run_train(const ExperimentConfig& cfg, const std::string& out_dir) {
  validate_config(cfg);
  const Datasets data = build_datasets(cfg);

  RunResult result;
  result.run_dir = (fs::path(out_dir) / cfg.name).string();
  fs::create_directories(result.run_dir);
  result.csv_path = (fs::path(result.run_dir) / "train.csv").string();
  result.ckpt_path = (fs::path(result.run_dir) / "model.ckpt").string();

  {
    std::ofstream cf(fs::path(result.run_dir) / "config.txt");
    cf << serialize_config(cfg);
  }

  Detector det(cfg.detector_config(), Rng::mix(cfg.seed, 1));
  Optimizer opt(cfg.optim_config(), det.params());
  Rng train_rng(Rng::mix(cfg.seed, 2));
  Rng shuffle_rng(Rng::mix(cfg.seed, 3));
  const LossConfig lcfg = cfg.loss_config();

  // Frozen teacher assignments for matching distillation.
  std::vector<Matching> teacher_matchings;
  if (cfg.matcher == MatcherScheme::kDistilled) {
    Detector teacher(cfg.detector_config(), Rng::mix(cfg.seed, 4));
    teacher.load(cfg.teacher_ckpt);
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      teacher_matchings.push_back(
          distill_matching(teacher, data.train[i], data.train_pyr[i], lcfg.weights));
    }
  }

  const int n_probe = std::min(cfg.probe_scenes, cfg.train_scenes);
  std::vector<Matching> probe_prev;

  std::ofstream csv(result.csv_path);
  if (!csv) throw IoError("cannot write " + result.csv_path);
  csv << csv_header(cfg) << "\n";

  std::vector<int> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Step-decayed learning rate at 2/3 and 8/9 of the schedule.
    if (3 * epoch > 2 * cfg.epochs) opt.set_lr_scale(0.1);
    if (9 * epoch > 8 * cfg.epochs) opt.set_lr_scale(0.01);
    // Fisher-Yates over the training order.
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
    }

    EpochRow row;
    row.epoch = epoch;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const Scene*> scenes;
      std::vector<const FeaturePyramid*> pyrs;
      std::vector<const Matching*> dist;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        scenes.push_back(&data.train[order[i]]);
        pyrs.push_back(&data.train_pyr[order[i]]);
        if (!teacher_matchings.empty()) dist.push_back(&teacher_matchings[order[i]]);
      }
      StepStats stats = train_batch(det, scenes, pyrs, cfg.matcher,
                                    dist.empty() ? nullptr : &dist, opt, train_rng, lcfg);
      row.loss_total += stats.loss_total;
      row.loss_class += stats.loss_class;
      row.loss_l1 += stats.loss_l1;
      row.loss_giou += stats.loss_giou;
      row.loss_aux += stats.loss_aux;
      row.fallbacks += stats.fallbacks;
      ++steps;
    }
    row.loss_total /= steps;
    row.loss_class /= steps;
    row.loss_l1 /= steps;
    row.loss_giou /= steps;
    row.loss_aux /= steps;

    // Assignment churn on a fixed probe set, measured with deterministic
    // eval-mode forwards.
    std::vector<Matching> probe_now;
    for (int i = 0; i < n_probe; ++i) {
      if (cfg.matcher == MatcherScheme::kDistilled) {
        probe_now.push_back(teacher_matchings[i]);
      } else {
        const MatcherScheme probe_scheme = cfg.matcher == MatcherScheme::kRestricted
                                               ? MatcherScheme::kRestricted
                                               : MatcherScheme::kUnrestricted;
        probe_now.push_back(
            eval_matching(det, data.train[i], data.train_pyr[i], probe_scheme, lcfg.weights));
      }
    }
    if (!probe_prev.empty()) {
      double acc = 0.0;
      for (int i = 0; i < n_probe; ++i) {
        acc += matching_instability(probe_prev[i], probe_now[i],
                                    static_cast<int>(data.train[i].objects.size()));
      }
      row.instability = n_probe > 0 ? acc / n_probe : 0.0;
    }
    probe_prev = std::move(probe_now);

    ValSummary vs = evaluate_on_val(det, data, cfg);
    row.eval = vs.eval;
    row.sparsity = std::move(vs.sparsity);

    csv << row_to_csv(row) << "\n";
    result.rows.push_back(std::move(row));
  }
  csv.close();

  det.save(result.ckpt_path);
  result.final_eval = result.rows.empty() ? EvalReport{} : result.rows.back().eval;
  return result;
}

EvalReport run_eval(const ExperimentConfig& cfg, const std::string& ckpt_path) {
  validate_config(cfg);
  const Datasets data = build_datasets(cfg);
  Detector det(cfg.detector_config(), Rng::mix(cfg.seed, 1));
  det.load(ckpt_path);
  return evaluate_on_val(det, data, cfg).eval;
}

namespace {

std::vector<RunResult> run_many(const std::vector<ExperimentConfig>& cfgs,
                                const std::string& out_dir, int jobs) {
  std::vector<RunResult> results(cfgs.size());
  std::vector<std::exception_ptr> errors(cfgs.size());
  std::atomic<std::size_t> next{0};
  jobs = std::max(1, jobs);
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cfgs.size()) return;
      try {
        results[i] = run_train(cfgs[i], out_dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1 || cfgs.size() == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < std::min<int>(jobs, static_cast<int>(cfgs.size())); ++j) {
      pool.emplace_back(worker);
    }
    for (std::thread& th : pool) th.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace

void run_compare(const std::vector<ExperimentConfig>& cfgs, const std::string& out_dir, int jobs) {
  if (cfgs.empty()) throw ConfigError("compare: no configs");
  std::vector<ExperimentConfig> named = cfgs;
  for (std::size_t i = 0; i < named.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (named[j].name == named[i].name) {
        named[i].name += "_" + std::to_string(i);
        break;
      }
    }
  }
  const std::vector<RunResult> results = run_many(named, out_dir, jobs);

  std::size_t max_epochs = 0;
  for (const RunResult& r : results) max_epochs = std::max(max_epochs, r.rows.size());

  fs::create_directories(out_dir);
  const std::string csv_path = (fs::path(out_dir) / "compare.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  csv << "epoch";
  for (const ExperimentConfig& c : named) csv << "," << c.name << "_ap";
  csv << "\n";
  for (std::size_t e = 0; e < max_epochs; ++e) {
    csv << (e + 1);
    for (const RunResult& r : results) {
      csv << ",";
      if (e < r.rows.size()) csv << fmt(r.rows[e].eval.ap);
    }
    csv << "\n";
  }
  csv.close();

  std::vector<double> xs(max_epochs);
  for (std::size_t e = 0; e < max_epochs; ++e) xs[e] = static_cast<double>(e + 1);
  std::vector<std::pair<std::string, std::vector<double>>> series;
  for (std::size_t i = 0; i < results.size(); ++i) {
    std::vector<double> ys;
    for (const EpochRow& r : results[i].rows) ys.push_back(r.eval.ap);
    series.emplace_back(named[i].name, std::move(ys));
  }
  write_line_chart((fs::path(out_dir) / "compare.svg").string(), "validation AP per epoch", xs,
                   series);
}

void run_sweep_k(const ExperimentConfig& cfg, const std::vector<int>& ks,
                 const std::string& out_dir, int jobs) {
  if (ks.empty()) throw ConfigError("sweep-k: no k values");
  std::vector<ExperimentConfig> cfgs;
  for (int k : ks) {
    ExperimentConfig c = cfg;
    c.k = k;
    c.name = cfg.name + "_k" + std::to_string(k);
    cfgs.push_back(std::move(c));
  }
  const std::vector<RunResult> results = run_many(cfgs, out_dir, jobs);

  fs::create_directories(out_dir);
  const std::string csv_path = (fs::path(out_dir) / "sweep_k.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  csv << "k,ap,ap_s,ap_m,ap_l\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const EvalReport& e = results[i].final_eval;
    csv << ks[i] << "," << fmt(e.ap) << "," << fmt(e.ap_s) << "," << fmt(e.ap_m) << ","
        << fmt(e.ap_l) << "\n";
  }
  csv.close();

  std::vector<double> xs(ks.begin(), ks.end());
  std::vector<double> ys;
  for (const RunResult& r : results) ys.push_back(r.final_eval.ap);
  write_line_chart((fs::path(out_dir) / "sweep_k.svg").string(), "AP vs token budget", xs,
                   {{"ap", ys}});
}

void analyze_attention(const ExperimentConfig& cfg, const std::string& ckpt_path,
                       const std::string& out_csv) {
  validate_config(cfg);
  const Datasets data = build_datasets(cfg);
  Detector det(cfg.detector_config(), Rng::mix(cfg.seed, 1));
  det.load(ckpt_path);
  const ValSummary vs = evaluate_on_val(det, data, cfg);
  const std::vector<std::string> cols = sparsity_columns(cfg);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_csv.empty()) {
    file.open(out_csv);
    if (!file) throw IoError("cannot write " + out_csv);
    out = &file;
  }
  (*out) << "column,sparsity\n";
  for (std::size_t i = 0; i < cols.size(); ++i) {
    (*out) << cols[i] << "," << fmt(vs.sparsity[i]) << "\n";
  }
}

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<double>& xs,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  try {
    const int W = 800, H = 500, ML = 60, MR = 160, MT = 40, MB = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (double x : xs) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
    for (const auto& [name, ys] : series) {
      for (double y : ys) {
        if (!std::isfinite(y)) continue;
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
    if (!(xmax > xmin)) xmax = xmin + 1.0;
    if (!(ymax > ymin)) ymax = ymin + 1.0;
    const double yr = ymax - ymin;
    ymin -= 0.05 * yr;
    ymax += 0.05 * yr;

    auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

    std::ofstream out(path);
    if (!out) return;
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
        << "</text>\n";
    out << "<line x1='" << ML << "' y1='" << H - MB << "' x2='" << W - MR << "' y2='" << H - MB
        << "' stroke='black'/>\n";
    out << "<line x1='" << ML << "' y1='" << MT << "' x2='" << ML << "' y2='" << H - MB
        << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double y = ymin + (ymax - ymin) * i / 4.0;
      out << "<text x='" << ML - 6 << "' y='" << py(y) + 4
          << "' text-anchor='end' font-size='11'>" << fmt(y) << "</text>\n";
      const double x = xmin + (xmax - xmin) * i / 4.0;
      out << "<text x='" << px(x) << "' y='" << H - MB + 18
          << "' text-anchor='middle' font-size='11'>" << fmt(x) << "</text>\n";
    }
    int si = 0;
    for (const auto& [name, ys] : series) {
      const char* color = palette[si % 8];
      out << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
      for (std::size_t i = 0; i < ys.size() && i < xs.size(); ++i) {
        if (!std::isfinite(ys[i])) continue;
        out << px(xs[i]) << "," << py(ys[i]) << " ";
      }
      out << "'/>\n";
      out << "<text x='" << W - MR + 10 << "' y='" << MT + 16 * si + 12 << "' fill='" << color
          << "' font-size='12'>" << name << "</text>\n";
      ++si;
    }
    out << "</svg>\n";
  } catch (...) {
    // Plots are best-effort; the CSV is the contract.
  }
}

}  // namespace tsp
