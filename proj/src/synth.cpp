#include "lego/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace lego {

namespace {

constexpr double kCameraDistance = 2.0;

void paint(OccupancyGrid& g, const Box& b) {
  for (int z = b.z0; z < b.z0 + b.dz; ++z)
    for (int y = b.y0; y < b.y0 + b.dy; ++y)
      for (int x = b.x0; x < b.x0 + b.dx; ++x) g.at(z, y, x) = 1.f;
}

OccupancyGrid realize(const ShapeSpec& spec) {
  OccupancyGrid g(spec.grid_side);
  for (const Box& b : spec.boxes) {
    if (b.z0 < 0 || b.y0 < 0 || b.x0 < 0 || b.dz < 1 || b.dy < 1 || b.dx < 1 ||
        b.z0 + b.dz > spec.grid_side || b.y0 + b.dy > spec.grid_side ||
        b.x0 + b.dx > spec.grid_side)
      throw std::logic_error("generated box leaves the grid");
    paint(g, b);
  }
  return g;
}

int pick(std::mt19937& rng, int lo, int hi) {  // inclusive
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::vector<Box> make_slab(std::mt19937& rng, int n) {
  const int dz = pick(rng, 1, std::max(1, n / 4));
  const int dy = pick(rng, n / 2, n), dx = pick(rng, n / 2, n);
  return {Box{pick(rng, 0, n - dz), pick(rng, 0, n - dy), pick(rng, 0, n - dx), dz, dy, dx}};
}

std::vector<Box> make_lshape(std::mt19937& rng, int n) {
  // horizontal arm plus vertical arm, sharing the corner
  const int dy = pick(rng, n / 2, n), dx = pick(rng, n / 2, n);
  const int arm_z = pick(rng, 1, n / 4), arm_y = pick(rng, 1, std::max(1, dy / 3));
  const int tall = pick(rng, n / 2, n);
  const int y0 = pick(rng, 0, n - dy), x0 = pick(rng, 0, n - dx);
  return {Box{0, y0, x0, arm_z, dy, dx}, Box{0, y0, x0, tall, arm_y, dx}};
}

std::vector<Box> make_table(std::mt19937& rng, int n) {
  const int top_dz = pick(rng, 1, 2);
  const int dy = pick(rng, n / 2, n - 1), dx = pick(rng, n / 2, n - 1);
  const int y0 = pick(rng, 0, n - dy), x0 = pick(rng, 0, n - dx);
  const int top_z = pick(rng, n / 2, n - top_dz);
  std::vector<Box> boxes{Box{top_z, y0, x0, top_dz, dy, dx}};
  const int legs = pick(rng, 2, 4);
  const int leg = std::max(1, n / 8);
  const int corners[4][2] = {{y0, x0},
                             {y0 + dy - leg, x0},
                             {y0, x0 + dx - leg},
                             {y0 + dy - leg, x0 + dx - leg}};
  for (int i = 0; i < legs; ++i)
    boxes.push_back(Box{0, corners[i][0], corners[i][1], top_z, leg, leg});
  return boxes;
}

std::vector<Box> make_chair(std::mt19937& rng, int n) {
  const int seat_dz = pick(rng, 1, 2);
  const int dy = pick(rng, n / 2, n - 1), dx = pick(rng, n / 2, n - 1);
  const int y0 = pick(rng, 0, n - dy), x0 = pick(rng, 0, n - dx);
  const int seat_z = pick(rng, n / 4, n / 2);
  const int leg = std::max(1, n / 8);
  const int back_dy = std::max(1, n / 8);
  std::vector<Box> boxes{Box{seat_z, y0, x0, seat_dz, dy, dx}};
  boxes.push_back(  // backrest along the low-y edge, up to near the top
      Box{seat_z, y0, x0, n - seat_z, back_dy, dx});
  const int corners[4][2] = {{y0, x0},
                             {y0 + dy - leg, x0},
                             {y0, x0 + dx - leg},
                             {y0 + dy - leg, x0 + dx - leg}};
  for (auto& c : corners) boxes.push_back(Box{0, c[0], c[1], seat_z, leg, leg});
  return boxes;
}

std::vector<Box> make_random_union(std::mt19937& rng, int n) {
  const int count = pick(rng, 2, 4);
  std::vector<Box> boxes;
  for (int i = 0; i < count; ++i) {
    const int dz = pick(rng, 1, n / 2), dy = pick(rng, 1, n / 2), dx = pick(rng, 1, n / 2);
    boxes.push_back(Box{pick(rng, 0, n - dz), pick(rng, 0, n - dy), pick(rng, 0, n - dx),
                        dz, dy, dx});
  }
  return boxes;
}

double snap(double v) {
  for (double target : {0.0, 1.0, -1.0})
    if (std::abs(v - target) < 1e-12) return target;
  return v;
}

struct Vec3 {
  double x, y, z;
};

std::string pad4(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", v);
  return buf;
}

uint32_t derive_seed(uint32_t seed, uint32_t index) {
  uint64_t h = (static_cast<uint64_t>(seed) << 32) | (index + 1);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return static_cast<uint32_t>(h);
}

}  // namespace

std::pair<ShapeSpec, OccupancyGrid> generate_shape(uint32_t seed, const std::string& archetype,
                                                   int n) {
  if (n < 8) throw std::invalid_argument("generate_shape needs grid side >= 8");
  std::mt19937 rng(seed);
  ShapeSpec spec;
  spec.seed = seed;
  spec.archetype = archetype;
  spec.grid_side = n;
  if (archetype == "slab")
    spec.boxes = make_slab(rng, n);
  else if (archetype == "lshape")
    spec.boxes = make_lshape(rng, n);
  else if (archetype == "table")
    spec.boxes = make_table(rng, n);
  else if (archetype == "chair")
    spec.boxes = make_chair(rng, n);
  else if (archetype == "random-union")
    spec.boxes = make_random_union(rng, n);
  else
    throw std::invalid_argument("unknown archetype: " + archetype);
  OccupancyGrid g = realize(spec);
  if (g.count_occupied() == 0) throw std::logic_error("generated an empty grid");
  return {std::move(spec), std::move(g)};
}

RenderedView render_view(const OccupancyGrid& g, float azimuth_deg, float elevation_deg,
                         int width, int height, RenderMode mode) {
  if (!g.is_binary()) throw std::invalid_argument("render_view requires a binary grid");
  if (width < 1 || height < 1) throw std::invalid_argument("render_view needs positive size");
  const int n = g.side;
  const double az = azimuth_deg * M_PI / 180.0, el = elevation_deg * M_PI / 180.0;
  const Vec3 dir{snap(-std::cos(el) * std::cos(az)), snap(-std::cos(el) * std::sin(az)),
                 snap(-std::sin(el))};
  const Vec3 right{snap(-std::sin(az)), snap(std::cos(az)), 0.0};
  // up = right x dir
  const Vec3 up{snap(right.y * dir.z - right.z * dir.y), snap(right.z * dir.x - right.x * dir.z),
                snap(right.x * dir.y - right.y * dir.x)};
  const Vec3 cam{-dir.x * kCameraDistance, -dir.y * kCameraDistance, -dir.z * kCameraDistance};

  RenderedView view;
  view.width = width;
  view.height = height;
  view.azimuth_deg = azimuth_deg;
  view.elevation_deg = elevation_deg;
  view.pixels.assign(static_cast<size_t>(width) * height, 0.f);

  const double h = 2.0 / n;  // voxel size in world units
  for (int py = 0; py < height; ++py)
    for (int px = 0; px < width; ++px) {
      const double u = -1.0 + (px + 0.5) * 2.0 / width;
      const double v = 1.0 - (py + 0.5) * 2.0 / height;
      const Vec3 o{cam.x + u * right.x + v * up.x, cam.y + u * right.y + v * up.y,
                   cam.z + u * right.z + v * up.z};
      // clip the ray to the cube [-1,1]^3
      double tmin = 0.0, tmax = kCameraDistance * 2;
      bool miss = false;
      const double od[3] = {o.x, o.y, o.z}, dd[3] = {dir.x, dir.y, dir.z};
      for (int a = 0; a < 3 && !miss; ++a) {
        if (dd[a] == 0.0) {
          if (od[a] <= -1.0 || od[a] >= 1.0) miss = true;
          continue;
        }
        double t0 = (-1.0 - od[a]) / dd[a], t1 = (1.0 - od[a]) / dd[a];
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        if (tmin >= tmax) miss = true;
      }
      if (miss) continue;

      // voxel traversal (Amanatides-Woo)
      const double eps = 1e-9;
      double start[3];
      int idx[3];
      bool outside = false;
      for (int a = 0; a < 3; ++a) {
        start[a] = od[a] + (tmin + eps) * dd[a];
        idx[a] = static_cast<int>(std::floor((start[a] + 1.0) / h));
        if (idx[a] < 0 || idx[a] >= n) outside = true;
      }
      if (outside) continue;
      int step[3];
      double tdelta[3], tnext[3];
      for (int a = 0; a < 3; ++a) {
        if (dd[a] > 0) {
          step[a] = 1;
          tdelta[a] = h / dd[a];
          tnext[a] = ((idx[a] + 1) * h - 1.0 - od[a]) / dd[a];
        } else if (dd[a] < 0) {
          step[a] = -1;
          tdelta[a] = -h / dd[a];
          tnext[a] = (idx[a] * h - 1.0 - od[a]) / dd[a];
        } else {
          step[a] = 0;
          tdelta[a] = 0;
          tnext[a] = 1e30;
        }
      }
      double t = tmin;
      float value = 0.f;
      while (t < tmax + eps) {
        if (g.at(idx[2], idx[1], idx[0]) != 0.f) {  // idx order is x,y,z
          if (mode == RenderMode::Silhouette) {
            value = 1.f;
          } else {
            const double depth =
                (kCameraDistance + 1.0 - t) / 2.0;  // 1 at the near tangent plane
            value = static_cast<float>(std::clamp(depth, 0.0, 1.0));
          }
          break;
        }
        int a = 0;
        if (tnext[1] < tnext[a]) a = 1;
        if (tnext[2] < tnext[a]) a = 2;
        t = tnext[a];
        tnext[a] += tdelta[a];
        idx[a] += step[a];
        if (idx[a] < 0 || idx[a] >= n) break;
      }
      view.pixels[static_cast<size_t>(py) * width + px] = value;
    }
  return view;
}

void save_pgm(const std::string& path, const RenderedView& view) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P5\n" << view.width << " " << view.height << "\n255\n";
  std::vector<uint8_t> bytes(view.pixels.size());
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<uint8_t>(std::lround(std::clamp(view.pixels[i], 0.f, 1.f) * 255.f));
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

RenderedView load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (!f || magic != "P5" || w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error("unsupported PGM header in " + path);
  f.get();  // single whitespace after maxval
  std::vector<uint8_t> bytes(static_cast<size_t>(w) * h);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("truncated PGM payload in " + path);
  RenderedView view;
  view.width = w;
  view.height = h;
  view.pixels.resize(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) view.pixels[i] = bytes[i] / 255.f;
  return view;
}

Tensor view_tensor(const RenderedView& view) {
  return Tensor({1, view.height, view.width}, view.pixels);
}

DatasetManifest build_dataset(const DatasetConfig& cfg) {
  if (!(cfg.split_fraction > 0.f && cfg.split_fraction < 1.f))
    throw std::invalid_argument("split fraction must lie in (0,1)");
  if (cfg.out_dir.empty()) throw std::invalid_argument("dataset output directory not set");
  std::vector<std::pair<float, float>> angles = cfg.view_angles;
  if (angles.empty())
    for (int j = 0; j < 8; ++j) angles.push_back({45.f * j, 20.f});

  std::error_code ec;
  fs::create_directories(fs::path(cfg.out_dir) / "objects", ec);
  fs::create_directories(fs::path(cfg.out_dir) / "views", ec);
  if (ec) throw std::runtime_error("cannot create dataset directories under " + cfg.out_dir);

  DatasetManifest m;
  m.grid_side = cfg.grid_side;
  m.base_dir = cfg.out_dir;

  uint32_t index = 0;
  for (const auto& [archetype, count] : cfg.counts) {
    for (int i = 0; i < count; ++i, ++index) {
      auto [spec, grid] = generate_shape(derive_seed(cfg.seed, index), archetype, cfg.grid_side);
      ManifestObject obj;
      obj.id = archetype + "-" + pad4(i);
      obj.archetype = archetype;
      obj.voxel_path = "objects/" + obj.id + ".voxg";
      save_voxg((fs::path(cfg.out_dir) / obj.voxel_path).string(), grid, true);
      for (size_t j = 0; j < angles.size(); ++j) {
        RenderedView view = render_view(grid, angles[j].first, angles[j].second, cfg.image_side,
                                        cfg.image_side, cfg.mode);
        ManifestView mv;
        mv.path = "views/" + obj.id + "-v" + std::to_string(j) + ".pgm";
        mv.azimuth_deg = angles[j].first;
        mv.elevation_deg = angles[j].second;
        save_pgm((fs::path(cfg.out_dir) / mv.path).string(), view);
        obj.views.push_back(std::move(mv));
      }
      m.objects.push_back(std::move(obj));
    }
  }

  // deterministic split: shuffle indices, first ceil-rounded share trains
  std::vector<size_t> order(m.objects.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937 rng(derive_seed(cfg.seed, 0x51170u));
  std::shuffle(order.begin(), order.end(), rng);
  const size_t n_train =
      static_cast<size_t>(std::lround(cfg.split_fraction * m.objects.size()));
  for (size_t r = 0; r < order.size(); ++r)
    m.objects[order[r]].split = r < n_train ? "train" : "test";

  save_manifest((fs::path(cfg.out_dir) / "manifest.json").string(), m);
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  json objs = json::array();
  for (const auto& obj : m.objects) {
    json views = json::array();
    for (const auto& v : obj.views)
      views.push_back({{"path", v.path},
                       {"azimuth_deg", v.azimuth_deg},
                       {"elevation_deg", v.elevation_deg}});
    objs.push_back({{"id", obj.id},
                    {"archetype", obj.archetype},
                    {"voxel_path", obj.voxel_path},
                    {"views", views},
                    {"split", obj.split}});
  }
  const json doc = {{"version", m.version}, {"grid_side", m.grid_side}, {"objects", objs}};
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << doc.dump(2) << "\n";
  if (!f) throw std::runtime_error("write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  json doc;
  try {
    f >> doc;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("bad manifest JSON in " + path + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.version = doc.at("version").get<int>();
    m.grid_side = doc.at("grid_side").get<int>();
    for (const auto& jo : doc.at("objects")) {
      ManifestObject obj;
      obj.id = jo.at("id").get<std::string>();
      obj.archetype = jo.at("archetype").get<std::string>();
      obj.voxel_path = jo.at("voxel_path").get<std::string>();
      obj.split = jo.at("split").get<std::string>();
      for (const auto& jv : jo.at("views")) {
        ManifestView mv;
        mv.path = jv.at("path").get<std::string>();
        mv.azimuth_deg = jv.at("azimuth_deg").get<float>();
        mv.elevation_deg = jv.at("elevation_deg").get<float>();
        obj.views.push_back(std::move(mv));
      }
      m.objects.push_back(std::move(obj));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("bad manifest fields in " + path + ": " + e.what());
  }
  m.base_dir = fs::path(path).parent_path().string();
  return m;
}

}  // namespace lego
