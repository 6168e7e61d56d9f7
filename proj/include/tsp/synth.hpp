#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsp/geometry.hpp"
#include "tsp/rng.hpp"
#include "tsp/tensor.hpp"

namespace tsp {

// Object-size strata as fractions of image area. COCO's 32^2 / 96^2 pixel
// cutoffs at a notional 320 px image.
inline constexpr double kSmallAreaMax = 0.01;
inline constexpr double kMediumAreaMax = 0.09;

enum class SizeBucket { kSmall, kMedium, kLarge };
SizeBucket size_bucket(double area);

struct SynthConfig {
  int num_classes = 3;
  int min_objects = 1;
  int max_objects = 8;
  // Stratum sampling weights; renormalized internally.
  double p_small = 0.4;
  double p_medium = 0.4;
  double p_large = 0.2;
  double noise = 0.02;
  std::vector<int> grid_sizes = {16, 8, 4};  // finest to coarsest
};

struct Scene {
  std::uint64_t seed = 0;
  std::vector<LabeledObject> objects;
};

// Hand-crafted multi-level features standing in for a backbone + FPN. Each
// level is a grid of cells; a cell's feature encodes only local evidence
// about objects overlapping its window, so context aggregation is left to
// the model.
struct FeaturePyramid {
  struct Level {
    int grid = 0;
    Tensor feats;  // (grid * grid) x feat_dim, rows in (row, col) scan order
  };
  std::vector<Level> levels;
  int feat_dim = 0;

  int total_cells() const;
  // Normalized center of a cell.
  static double cell_center(int grid, int rc) { return (rc + 0.5) / grid; }
};

// Feature layout per cell, with C = num_classes:
//   [0, C)      per-class coverage (one-hot scaled by overlap fraction, summed
//               over overlapping objects)
//   [C, C+4)    coverage-weighted signed offsets from the cell center to the
//               box sides (x1, y1, x2, y2 deltas)
//   C+4         total coverage
//   C+5         background indicator, 1 - min(1, total coverage)
// Gaussian noise of the configured level is added to every channel.
int feature_dim(const SynthConfig& cfg);

Scene generate_scene(Rng& rng, const SynthConfig& cfg, std::uint64_t seed);
// Scene for a dataset seed: derives its own generator, so streams are
// reproducible scene by scene.
Scene scene_for_seed(std::uint64_t seed, const SynthConfig& cfg);

FeaturePyramid featurize(const Scene& scene, const SynthConfig& cfg);

// Line-delimited text: "seed class,cx,cy,w,h;class,cx,cy,w,h;...".
// Coordinates use max-precision formatting and round-trip exactly.
void write_scenes(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_scenes(const std::string& path);

}  // namespace tsp
