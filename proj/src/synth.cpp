#include "tsp/synth.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tsp/errors.hpp"

namespace tsp {

SizeBucket size_bucket(double area) {
  if (area < kSmallAreaMax) return SizeBucket::kSmall;
  if (area < kMediumAreaMax) return SizeBucket::kMedium;
  return SizeBucket::kLarge;
}

int FeaturePyramid::total_cells() const {
  int n = 0;
  for (const Level& l : levels) n += l.grid * l.grid;
  return n;
}

int feature_dim(const SynthConfig& cfg) { return cfg.num_classes + 6; }

Scene generate_scene(Rng& rng, const SynthConfig& cfg, std::uint64_t seed) {
  Scene scene;
  scene.seed = seed;
  const int count = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  const double total = cfg.p_small + cfg.p_medium + cfg.p_large;
  for (int i = 0; i < count; ++i) {
    LabeledObject obj;
    obj.category = rng.uniform_int(0, cfg.num_classes - 1);
    const double pick = rng.uniform01() * total;
    double area;
    if (pick < cfg.p_small) {
      area = rng.uniform(0.001, 0.0095);
    } else if (pick < cfg.p_small + cfg.p_medium) {
      area = rng.uniform(0.012, 0.085);
    } else {
      area = rng.uniform(0.095, 0.30);
    }
    const double aspect = rng.uniform(0.6, 1.0 / 0.6);
    obj.box.w = std::sqrt(area * aspect);
    obj.box.h = std::sqrt(area / aspect);
    obj.box.cx = rng.uniform(obj.box.w / 2.0, 1.0 - obj.box.w / 2.0);
    obj.box.cy = rng.uniform(obj.box.h / 2.0, 1.0 - obj.box.h / 2.0);
    scene.objects.push_back(obj);
  }
  return scene;
}

Scene scene_for_seed(std::uint64_t seed, const SynthConfig& cfg) {
  Rng rng(Rng::mix(seed, 0xA11CE));
  return generate_scene(rng, cfg, seed);
}

FeaturePyramid featurize(const Scene& scene, const SynthConfig& cfg) {
  const int dim = feature_dim(cfg);
  const int c_classes = cfg.num_classes;
  Rng noise_rng(Rng::mix(scene.seed, 0xFEA7));

  FeaturePyramid pyr;
  pyr.feat_dim = dim;
  for (int grid : cfg.grid_sizes) {
    FeaturePyramid::Level level;
    level.grid = grid;
    level.feats = Tensor::zeros(grid * grid, dim);
    const double cell = 1.0 / grid;
    for (int r = 0; r < grid; ++r) {
      for (int col = 0; col < grid; ++col) {
        const int idx = r * grid + col;
        const double cx = FeaturePyramid::cell_center(grid, col);
        const double cy = FeaturePyramid::cell_center(grid, r);
        const double wx1 = col * cell, wx2 = (col + 1) * cell;
        const double wy1 = r * cell, wy2 = (r + 1) * cell;
        double total_cov = 0.0;
        for (const LabeledObject& obj : scene.objects) {
          const Corners b = to_corner(obj.box);
          const double iw = std::min(wx2, b.x2) - std::max(wx1, b.x1);
          const double ih = std::min(wy2, b.y2) - std::max(wy1, b.y1);
          if (iw <= 0.0 || ih <= 0.0) continue;
          const double cov = (iw * ih) / (cell * cell);
          total_cov += cov;
          level.feats.at(idx, obj.category) += cov;
          level.feats.at(idx, c_classes + 0) += cov * (b.x1 - cx);
          level.feats.at(idx, c_classes + 1) += cov * (b.y1 - cy);
          level.feats.at(idx, c_classes + 2) += cov * (b.x2 - cx);
          level.feats.at(idx, c_classes + 3) += cov * (b.y2 - cy);
        }
        level.feats.at(idx, c_classes + 4) = total_cov;
        level.feats.at(idx, c_classes + 5) = 1.0 - std::min(1.0, total_cov);
        if (cfg.noise > 0.0) {
          for (int f = 0; f < dim; ++f) {
            level.feats.at(idx, f) += cfg.noise * noise_rng.normal();
          }
        }
      }
    }
    pyr.levels.push_back(std::move(level));
  }
  return pyr;
}

void write_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open scene file for writing: " + path);
  char buf[256];
  for (const Scene& s : scenes) {
    out << s.seed;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const LabeledObject& o = s.objects[i];
      std::snprintf(buf, sizeof(buf), "%s%d,%.17g,%.17g,%.17g,%.17g", i == 0 ? " " : ";",
                    o.category, o.box.cx, o.box.cy, o.box.w, o.box.h);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("scene file write failed: " + path);
}

std::vector<Scene> read_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file: " + path);
  std::vector<Scene> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Scene s;
    if (!(ls >> s.seed)) throw IoError("bad scene line: " + line);
    std::string rest;
    if (ls >> rest) {
      std::stringstream objs(rest);
      std::string tok;
      while (std::getline(objs, tok, ';')) {
        LabeledObject o;
        if (std::sscanf(tok.c_str(), "%d,%lg,%lg,%lg,%lg", &o.category, &o.box.cx, &o.box.cy,
                        &o.box.w, &o.box.h) != 5) {
          throw IoError("bad object tuple: " + tok);
        }
        s.objects.push_back(o);
      }
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace tsp
