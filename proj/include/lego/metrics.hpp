#pragma once

#include <array>
#include <string>
#include <vector>

#include "lego/model.hpp"
#include "lego/synth.hpp"
#include "lego/voxel.hpp"

namespace lego {

struct EvalConfig {
  float threshold = 0.3f;
  float fscore_distance = 0.01f;  // fraction of the normalized grid side
  std::vector<int> view_counts = {1, 2, 4, 8};
  bool capture_attention = false;

  void validate() const;  // throws std::invalid_argument
};

/// Surface voxel centers in normalized [0,1]^3 coordinates (z, y, x order).
struct SurfaceCloud {
  std::vector<std::array<float, 3>> points;
};

/// |a AND b| / |a OR b|; 1 when both grids are empty. Binary grids only.
float voxel_iou(const OccupancyGrid& a, const OccupancyGrid& b);

/// Centers of occupied voxels with an empty 6-neighbor or on the boundary.
SurfaceCloud surface_points(const OccupancyGrid& g);

/// Harmonic mean of precision and recall under nearest-point distance < d;
/// 1 for two empty clouds, 0 when precision + recall vanish.
float fscore(const SurfaceCloud& pred, const SurfaceCloud& gt, float d);

struct ObjectScore {
  std::string id;
  float iou = 0.f;
  float fscore = 0.f;
};

struct SweepEntry {
  int views = 0;
  float mean_iou = 0.f;
  float mean_fscore = 0.f;
  std::vector<ObjectScore> per_object;
};

struct SweepReport {
  std::string checkpoint;
  std::string dataset;
  std::vector<SweepEntry> per_view_count;
};

/// Evaluates `model` over the dataset's test split (train objects are used
/// only when no test split exists), taking the first v manifest views per
/// object for each requested count. Deterministic.
SweepReport evaluate_sweep(Model& model, const DatasetManifest& dataset, const EvalConfig& cfg,
                           const std::string& checkpoint_label = "",
                           const std::string& split = "test");

std::string report_to_json(const SweepReport& report);
void save_report(const std::string& path, const SweepReport& report);

struct PartAnalysis {
  std::vector<OccupancyGrid> parts;     // per-query rank-1 grids, unclipped
  std::vector<OccupancyGrid> partials;  // running clipped sums, query order
  OccupancyGrid composed;               // final clipped sum
};

/// Splits a factor-scheme forward pass into per-query contributions.
PartAnalysis part_analysis(Model& model, const std::vector<Tensor>& views);

// Attention export: JSON array of {kind, layer, head, rows, cols, scores}.
std::string attention_to_json(const std::vector<AttentionRecord>& records);
void export_attention(const std::string& path, const std::vector<AttentionRecord>& records);
std::vector<AttentionRecord> import_attention(const std::string& path);

}  // namespace lego
