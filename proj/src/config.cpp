#include "tsp/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "tsp/errors.hpp"

namespace tsp {

DetectorConfig ExperimentConfig::detector_config() const {
  DetectorConfig d;
  d.variant = variant;
  d.enc.layers = layers;
  d.enc.d_model = d_model;
  d.enc.heads = heads;
  d.enc.d_k = d_model / heads;
  d.enc.d_v = d_model / heads;
  d.enc.d_ffn = d_ffn;
  d.num_classes = num_classes;
  d.n_queries = n_queries;
  d.k_select = k;
  d.rpn_dedup_iou = rpn_dedup_iou;
  d.input_dropout = input_dropout;
  d.pe_two_pi = pe_two_pi;
  d.feat_dim = num_classes + 6;
  return d;
}

SynthConfig ExperimentConfig::synth_config() const {
  SynthConfig s;
  s.num_classes = num_classes;
  s.min_objects = min_objects;
  s.max_objects = max_objects;
  s.p_small = p_small;
  s.p_medium = p_medium;
  s.p_large = p_large;
  s.noise = noise;
  return s;
}

LossConfig ExperimentConfig::loss_config() const {
  LossConfig l;
  l.weights = CostWeights{w_class, w_l1, w_giou};
  l.focal_alpha = focal_alpha;
  l.focal_gamma = focal_gamma;
  return l;
}

OptimConfig ExperimentConfig::optim_config() const {
  OptimConfig o;
  o.lr = lr;
  o.weight_decay = weight_decay;
  o.clip_norm = clip_norm;
  o.split = split_optimizer;
  o.sgd_lr = sgd_lr;
  o.momentum = momentum;
  return o;
}

namespace {

int parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') throw ConfigError("bad integer for " + key + ": " + v);
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') throw ConfigError("bad integer for " + key + ": " + v);
  return static_cast<std::uint64_t>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') throw ConfigError("bad number for " + key + ": " + v);
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": " + v);
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

struct FieldDef {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<FieldDef>& fields() {
  static const std::vector<FieldDef> defs = {
      {"name", [](ExperimentConfig& c, const std::string& v) { c.name = v; },
       [](const ExperimentConfig& c) { return c.name; }},
      {"variant",
       [](ExperimentConfig& c, const std::string& v) { c.variant = variant_from_string(v); },
       [](const ExperimentConfig& c) { return to_string(c.variant); }},
      {"matcher",
       [](ExperimentConfig& c, const std::string& v) { c.matcher = matcher_from_string(v); },
       [](const ExperimentConfig& c) { return to_string(c.matcher); }},
      {"epochs", [](ExperimentConfig& c, const std::string& v) { c.epochs = parse_int("epochs", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.epochs); }},
      {"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      {"batch_size",
       [](ExperimentConfig& c, const std::string& v) { c.batch_size = parse_int("batch_size", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.batch_size); }},
      {"train_scenes",
       [](ExperimentConfig& c, const std::string& v) {
         c.train_scenes = parse_int("train_scenes", v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.train_scenes); }},
      {"val_scenes",
       [](ExperimentConfig& c, const std::string& v) { c.val_scenes = parse_int("val_scenes", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.val_scenes); }},
      {"probe_scenes",
       [](ExperimentConfig& c, const std::string& v) {
         c.probe_scenes = parse_int("probe_scenes", v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.probe_scenes); }},
      {"train_seed_base",
       [](ExperimentConfig& c, const std::string& v) {
         c.train_seed_base = parse_u64("train_seed_base", v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.train_seed_base); }},
      {"val_seed_base",
       [](ExperimentConfig& c, const std::string& v) {
         c.val_seed_base = parse_u64("val_seed_base", v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.val_seed_base); }},
      {"lr", [](ExperimentConfig& c, const std::string& v) { c.lr = parse_double("lr", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.lr); }},
      {"weight_decay",
       [](ExperimentConfig& c, const std::string& v) {
         c.weight_decay = parse_double("weight_decay", v);
       },
       [](const ExperimentConfig& c) { return fmt_double(c.weight_decay); }},
      {"clip_norm",
       [](ExperimentConfig& c, const std::string& v) { c.clip_norm = parse_double("clip_norm", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.clip_norm); }},
      {"split_optimizer",
       [](ExperimentConfig& c, const std::string& v) {
         c.split_optimizer = parse_bool("split_optimizer", v);
       },
       [](const ExperimentConfig& c) { return std::string(c.split_optimizer ? "true" : "false"); }},
      {"sgd_lr",
       [](ExperimentConfig& c, const std::string& v) { c.sgd_lr = parse_double("sgd_lr", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.sgd_lr); }},
      {"momentum",
       [](ExperimentConfig& c, const std::string& v) { c.momentum = parse_double("momentum", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.momentum); }},
      {"layers", [](ExperimentConfig& c, const std::string& v) { c.layers = parse_int("layers", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.layers); }},
      {"d_model",
       [](ExperimentConfig& c, const std::string& v) { c.d_model = parse_int("d_model", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.d_model); }},
      {"heads", [](ExperimentConfig& c, const std::string& v) { c.heads = parse_int("heads", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.heads); }},
      {"d_ffn", [](ExperimentConfig& c, const std::string& v) { c.d_ffn = parse_int("d_ffn", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.d_ffn); }},
      {"n_queries",
       [](ExperimentConfig& c, const std::string& v) { c.n_queries = parse_int("n_queries", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.n_queries); }},
      {"k", [](ExperimentConfig& c, const std::string& v) { c.k = parse_int("k", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.k); }},
      {"rpn_dedup_iou",
       [](ExperimentConfig& c, const std::string& v) {
         c.rpn_dedup_iou = parse_double("rpn_dedup_iou", v);
       },
       [](const ExperimentConfig& c) { return fmt_double(c.rpn_dedup_iou); }},
      {"input_dropout",
       [](ExperimentConfig& c, const std::string& v) {
         c.input_dropout = parse_double("input_dropout", v);
       },
       [](const ExperimentConfig& c) { return fmt_double(c.input_dropout); }},
      {"pe_two_pi",
       [](ExperimentConfig& c, const std::string& v) { c.pe_two_pi = parse_bool("pe_two_pi", v); },
       [](const ExperimentConfig& c) { return std::string(c.pe_two_pi ? "true" : "false"); }},
      {"w_class",
       [](ExperimentConfig& c, const std::string& v) { c.w_class = parse_double("w_class", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.w_class); }},
      {"w_l1", [](ExperimentConfig& c, const std::string& v) { c.w_l1 = parse_double("w_l1", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.w_l1); }},
      {"w_giou",
       [](ExperimentConfig& c, const std::string& v) { c.w_giou = parse_double("w_giou", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.w_giou); }},
      {"focal_alpha",
       [](ExperimentConfig& c, const std::string& v) {
         c.focal_alpha = parse_double("focal_alpha", v);
       },
       [](const ExperimentConfig& c) { return fmt_double(c.focal_alpha); }},
      {"focal_gamma",
       [](ExperimentConfig& c, const std::string& v) {
         c.focal_gamma = parse_double("focal_gamma", v);
       },
       [](const ExperimentConfig& c) { return fmt_double(c.focal_gamma); }},
      {"num_classes",
       [](ExperimentConfig& c, const std::string& v) { c.num_classes = parse_int("num_classes", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.num_classes); }},
      {"noise", [](ExperimentConfig& c, const std::string& v) { c.noise = parse_double("noise", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.noise); }},
      {"p_small",
       [](ExperimentConfig& c, const std::string& v) { c.p_small = parse_double("p_small", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.p_small); }},
      {"p_medium",
       [](ExperimentConfig& c, const std::string& v) { c.p_medium = parse_double("p_medium", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.p_medium); }},
      {"p_large",
       [](ExperimentConfig& c, const std::string& v) { c.p_large = parse_double("p_large", v); },
       [](const ExperimentConfig& c) { return fmt_double(c.p_large); }},
      {"min_objects",
       [](ExperimentConfig& c, const std::string& v) { c.min_objects = parse_int("min_objects", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.min_objects); }},
      {"max_objects",
       [](ExperimentConfig& c, const std::string& v) { c.max_objects = parse_int("max_objects", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.max_objects); }},
      {"sparsity_variant",
       [](ExperimentConfig& c, const std::string& v) {
         if (v != "paper" && v != "entropy") throw ConfigError("bad sparsity_variant: " + v);
         c.sparsity_variant = v;
       },
       [](const ExperimentConfig& c) { return c.sparsity_variant; }},
      {"teacher_ckpt",
       [](ExperimentConfig& c, const std::string& v) { c.teacher_ckpt = v; },
       [](const ExperimentConfig& c) { return c.teacher_ckpt; }},
  };
  return defs;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const FieldDef& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("bad config line: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    set_config_key(cfg, key, value);
    seen.insert(key);
  }
  for (const char* required : {"variant", "matcher", "epochs", "seed"}) {
    if (!seen.count(required)) throw ConfigError(std::string("missing config key: ") + required);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const FieldDef& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += "\n";
  }
  return out;
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.train_scenes < 1 || cfg.val_scenes < 1) throw ConfigError("need train and val scenes");
  if (cfg.d_model % cfg.heads != 0) throw ConfigError("d_model must be divisible by heads");
  if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects) {
    throw ConfigError("bad object count range");
  }
  if (cfg.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (cfg.input_dropout < 0.0 || cfg.input_dropout >= 1.0) {
    throw ConfigError("input_dropout must be in [0, 1)");
  }
  const bool tsp = cfg.variant == Variant::kTspFcos || cfg.variant == Variant::kTspRcnn;
  if ((cfg.matcher == MatcherScheme::kRestricted || cfg.matcher == MatcherScheme::kIndependent) &&
      !tsp) {
    throw ConfigError("restricted/independent matching requires a TSP variant");
  }
  if (cfg.matcher == MatcherScheme::kDistilled) {
    if (tsp) throw ConfigError("distilled matching requires a fixed prediction space (detr/encoder_only)");
    if (cfg.teacher_ckpt.empty()) throw ConfigError("distilled matching needs teacher_ckpt");
  }
  const SynthConfig sc;
  int cells = 0;
  for (int g : sc.grid_sizes) cells += g * g;
  if (tsp && (cfg.k < 1 || cfg.k > cells)) throw ConfigError("k out of range");
  if (!tsp && cfg.variant == Variant::kDetr && cfg.n_queries < cfg.max_objects) {
    throw ConfigError("n_queries must cover max_objects");
  }
}

}  // namespace tsp
