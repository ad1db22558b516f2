#include "lego/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace lego {

namespace {

AttentionKind kind_from_string(const std::string& s) {
  if (s == "encoder-encoder") return AttentionKind::EncoderEncoder;
  if (s == "decoder-encoder") return AttentionKind::DecoderEncoder;
  if (s == "decoder-decoder") return AttentionKind::DecoderDecoder;
  throw std::runtime_error("unknown attention kind: " + s);
}

void require_binary(const OccupancyGrid& g, const char* who) {
  if (!g.is_binary()) throw std::invalid_argument(std::string(who) + " needs a binary grid");
}

}  // namespace

void EvalConfig::validate() const {
  if (!(threshold > 0.f && threshold < 1.f))
    throw std::invalid_argument("eval threshold must lie in (0,1)");
  if (fscore_distance <= 0.f) throw std::invalid_argument("f-score distance must be > 0");
  if (view_counts.empty()) throw std::invalid_argument("at least one view count is required");
  for (int v : view_counts)
    if (v < 1) throw std::invalid_argument("view counts must be >= 1");
}

float voxel_iou(const OccupancyGrid& a, const OccupancyGrid& b) {
  if (a.side != b.side)
    throw std::invalid_argument("iou grid sides differ: " + std::to_string(a.side) + " vs " +
                                std::to_string(b.side));
  require_binary(a, "iou");
  require_binary(b, "iou");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const bool pa = a.values[i] > 0.5f, pb = b.values[i] > 0.5f;
    inter += pa && pb;
    uni += pa || pb;
  }
  // divide in double and round once so the result matches an exact counting
  // oracle to the last bit
  return uni == 0 ? 1.f : static_cast<float>(static_cast<double>(inter) / static_cast<double>(uni));
}

SurfaceCloud surface_points(const OccupancyGrid& g) {
  require_binary(g, "surface extraction");
  const int n = g.side;
  auto empty = [&](int z, int y, int x) {
    if (z < 0 || z >= n || y < 0 || y >= n || x < 0 || x >= n) return true;  // boundary counts
    return g.at(z, y, x) < 0.5f;
  };
  SurfaceCloud cloud;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        if (g.at(z, y, x) < 0.5f) continue;
        if (empty(z - 1, y, x) || empty(z + 1, y, x) || empty(z, y - 1, x) ||
            empty(z, y + 1, x) || empty(z, y, x - 1) || empty(z, y, x + 1))
          cloud.points.push_back({(z + 0.5f) / n, (y + 0.5f) / n, (x + 0.5f) / n});
      }
  return cloud;
}

float fscore(const SurfaceCloud& pred, const SurfaceCloud& gt, float d) {
  if (d <= 0.f) throw std::invalid_argument("f-score distance must be > 0");
  if (pred.points.empty() && gt.points.empty()) return 1.f;
  // exact all-pairs nearest neighbor; desk-scale clouds stay small
  auto hit_fraction = [d](const std::vector<std::array<float, 3>>& from,
                          const std::vector<std::array<float, 3>>& to) -> double {
    if (from.empty()) return 0.0;
    int64_t hits = 0;
    const double d2 = static_cast<double>(d) * d;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dz = p[0] - q[0], dy = p[1] - q[1], dx = p[2] - q[2];
        best = std::min(best, dz * dz + dy * dy + dx * dx);
      }
      hits += best < d2;
    }
    return static_cast<double>(hits) / static_cast<double>(from.size());
  };
  const double precision = hit_fraction(pred.points, gt.points);
  const double recall = hit_fraction(gt.points, pred.points);
  if (precision + recall == 0.0) return 0.f;
  return static_cast<float>(2.0 * precision * recall / (precision + recall));
}

SweepReport evaluate_sweep(Model& model, const DatasetManifest& dataset, const EvalConfig& cfg,
                           const std::string& checkpoint_label, const std::string& split) {
  cfg.validate();
  std::vector<const ManifestObject*> objects;
  for (const auto& obj : dataset.objects)
    if (obj.split == split) objects.push_back(&obj);
  if (objects.empty())
    for (const auto& obj : dataset.objects) objects.push_back(&obj);
  if (objects.empty()) throw std::invalid_argument("dataset has no objects to evaluate");

  SweepReport report;
  report.checkpoint = checkpoint_label;
  report.dataset = (fs::path(dataset.base_dir) / "manifest.json").string();

  for (int v : cfg.view_counts) {
    SweepEntry entry;
    entry.views = v;
    double iou_sum = 0, f_sum = 0;
    for (const ManifestObject* obj : objects) {
      if (static_cast<size_t>(v) > obj->views.size())
        throw std::invalid_argument("object " + obj->id + " has only " +
                                    std::to_string(obj->views.size()) + " views, " +
                                    std::to_string(v) + " requested");
      std::vector<Tensor> views;
      for (int i = 0; i < v; ++i)
        views.push_back(
            view_tensor(load_pgm((fs::path(dataset.base_dir) / obj->views[i].path).string())));
      OccupancyGrid target = load_voxg((fs::path(dataset.base_dir) / obj->voxel_path).string());

      Tape tape;
      ForwardResult fr = model.forward(tape, views);
      OccupancyGrid pred = threshold(fr.grid, cfg.threshold);

      ObjectScore score;
      score.id = obj->id;
      score.iou = voxel_iou(pred, target);
      score.fscore = fscore(surface_points(pred), surface_points(target), cfg.fscore_distance);
      iou_sum += score.iou;
      f_sum += score.fscore;
      entry.per_object.push_back(std::move(score));
    }
    entry.mean_iou = static_cast<float>(iou_sum / objects.size());
    entry.mean_fscore = static_cast<float>(f_sum / objects.size());
    report.per_view_count.push_back(std::move(entry));
  }
  return report;
}

std::string report_to_json(const SweepReport& report) {
  json sweeps = json::array();
  for (const auto& entry : report.per_view_count) {
    json per_object = json::array();
    for (const auto& s : entry.per_object)
      per_object.push_back({{"id", s.id}, {"iou", s.iou}, {"fscore", s.fscore}});
    sweeps.push_back({{"views", entry.views},
                      {"mean_iou", entry.mean_iou},
                      {"mean_fscore", entry.mean_fscore},
                      {"per_object", per_object}});
  }
  const json doc = {{"checkpoint", report.checkpoint},
                    {"dataset", report.dataset},
                    {"per_view_count", sweeps}};
  return doc.dump(2) + "\n";
}

void save_report(const std::string& path, const SweepReport& report) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write report: " + path);
  f << report_to_json(report);
}

PartAnalysis part_analysis(Model& model, const std::vector<Tensor>& views) {
  if (model.config().scheme != Scheme::Factors)
    throw std::invalid_argument("part analysis needs the factor scheme, got " +
                                to_string(model.config().scheme));
  Tape tape;
  ForwardResult fr = model.forward(tape, views);
  const int n = model.config().grid_side;

  PartAnalysis out;
  // accumulate in double so the final partial matches the composed grid,
  // which also sums its rank-1 terms in double before clipping
  std::vector<double> acc(static_cast<size_t>(n) * n * n, 0.0);
  for (int q = 0; q < fr.factors.count(); ++q) {
    OccupancyGrid part = rank1_grid(fr.factors.z[q], fr.factors.y[q], fr.factors.x[q]);
    OccupancyGrid partial(n);
    for (size_t i = 0; i < acc.size(); ++i) {
      acc[i] += static_cast<double>(fr.factors.z[q][i / (n * n)]) *
                fr.factors.y[q][(i / n) % n] * fr.factors.x[q][i % n];
      partial.values[i] = acc[i] < 1.0 ? static_cast<float>(acc[i]) : 1.f;
    }
    out.parts.push_back(std::move(part));
    out.partials.push_back(std::move(partial));
  }
  out.composed = fr.grid;
  return out;
}

std::string attention_to_json(const std::vector<AttentionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("no attention records were captured");
  json arr = json::array();
  for (const auto& r : records)
    arr.push_back({{"kind", to_string(r.kind)},
                   {"layer", r.layer},
                   {"head", r.head},
                   {"rows", r.rows},
                   {"cols", r.cols},
                   {"scores", r.scores}});
  return arr.dump(2) + "\n";
}

void export_attention(const std::string& path, const std::vector<AttentionRecord>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write attention export: " + path);
  f << attention_to_json(records);
}

std::vector<AttentionRecord> import_attention(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read attention export: " + path);
  json arr;
  try {
    f >> arr;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("bad attention export " + path + ": " + e.what());
  }
  std::vector<AttentionRecord> records;
  try {
    for (const auto& item : arr) {
      AttentionRecord r;
      r.kind = kind_from_string(item.at("kind").get<std::string>());
      r.layer = item.at("layer").get<int>();
      r.head = item.at("head").get<int>();
      r.rows = item.at("rows").get<int>();
      r.cols = item.at("cols").get<int>();
      r.scores = item.at("scores").get<std::vector<float>>();
      if (r.scores.size() != static_cast<size_t>(r.rows) * r.cols)
        throw std::runtime_error("score count does not match rows x cols");
      records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("bad attention export " + path + ": " + e.what());
  }
  return records;
}

}  // namespace lego
