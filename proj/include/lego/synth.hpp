#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lego/tensor.hpp"
#include "lego/voxel.hpp"

namespace lego {

/// Axis-aligned box in voxel units: origin (z0,y0,x0), extent (dz,dy,dx).
struct Box {
  int z0 = 0, y0 = 0, x0 = 0;
  int dz = 1, dy = 1, dx = 1;
};

struct ShapeSpec {
  uint32_t seed = 0;
  std::string archetype;
  std::vector<Box> boxes;
  int grid_side = 0;
};

enum class RenderMode { Silhouette, Depth };

struct RenderedView {
  int width = 0, height = 0;
  std::vector<float> pixels;  // row-major, values in [0,1]
  float azimuth_deg = 0.f, elevation_deg = 0.f;
};

struct ManifestView {
  std::string path;  // relative to the manifest file
  float azimuth_deg = 0.f, elevation_deg = 0.f;
};

struct ManifestObject {
  std::string id, archetype, voxel_path, split;  // split: train | test
  std::vector<ManifestView> views;
};

struct DatasetManifest {
  int version = 1;
  int grid_side = 0;
  std::vector<ManifestObject> objects;
  std::string base_dir;  // directory of the manifest file (not serialized)
};

/// Deterministic blocky object; grid is the voxelwise OR of the boxes.
/// Archetypes: table, chair, lshape, slab, random-union.
std::pair<ShapeSpec, OccupancyGrid> generate_shape(uint32_t seed, const std::string& archetype,
                                                   int n);

/// Orthographic render. The grid fills the cube [-1,1]^3 (z up); the camera
/// orbits at distance 2, azimuth in the x-y plane, elevation toward +z.
/// Silhouette: 1 iff the pixel ray hits an occupied voxel. Depth: normalized
/// first-hit distance, 1 at the near tangent plane, 0 for a miss.
RenderedView render_view(const OccupancyGrid& g, float azimuth_deg, float elevation_deg,
                         int width, int height, RenderMode mode);

// 8-bit binary PGM (P5)
void save_pgm(const std::string& path, const RenderedView& view);
RenderedView load_pgm(const std::string& path);

/// View image as a [1,H,W] tensor for the model.
Tensor view_tensor(const RenderedView& view);

struct DatasetConfig {
  std::vector<std::pair<std::string, int>> counts;  // archetype -> object count
  int grid_side = 16;
  int image_side = 32;
  // default: 8 views at 45-degree azimuth steps, elevation 20
  std::vector<std::pair<float, float>> view_angles;
  uint32_t seed = 0;
  float split_fraction = 0.8f;
  RenderMode mode = RenderMode::Silhouette;
  std::string out_dir;
};

/// Writes voxel files, PGM views, and manifest.json under out_dir.
/// Deterministic given the config (per-object derived seeds).
DatasetManifest build_dataset(const DatasetConfig& cfg);

void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

}  // namespace lego
