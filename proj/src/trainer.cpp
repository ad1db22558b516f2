#include "lego/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace fs = std::filesystem;

namespace lego {

namespace {

uint32_t step_seed(uint32_t seed, uint32_t step) {
  uint64_t h = (static_cast<uint64_t>(seed) << 32) | step;
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return static_cast<uint32_t>(h);
}

struct LoadedObject {
  std::vector<Tensor> views;
  OccupancyGrid target;
};

std::vector<LoadedObject> load_split(const DatasetManifest& m, const std::string& split) {
  std::vector<LoadedObject> out;
  for (const auto& obj : m.objects) {
    if (!split.empty() && obj.split != split) continue;
    LoadedObject lo;
    lo.target = load_voxg((fs::path(m.base_dir) / obj.voxel_path).string());
    for (const auto& v : obj.views)
      lo.views.push_back(view_tensor(load_pgm((fs::path(m.base_dir) / v.path).string())));
    out.push_back(std::move(lo));
  }
  return out;
}

float quick_iou(const OccupancyGrid& pred, const OccupancyGrid& target, float tau) {
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    const bool a = pred.values[i] >= tau, b = target.values[i] > 0.5f;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.f : static_cast<float>(inter) / static_cast<float>(uni);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (batch_size < 1) fail("batch size must be >= 1");
  if (total_steps < 0) fail("total steps must be >= 0");
  if (base_lr <= 0.f) fail("base lr must be > 0");
  if (warmup_steps < 0 || warmup_steps > total_steps)
    fail("warmup steps must lie in [0, total steps]");
  if (optimizer != "adagrad" && optimizer != "sgd") fail("optimizer must be adagrad or sgd");
  if (adagrad_eps <= 0.f) fail("adagrad eps must be > 0");
  if (fixed_views < 0) fail("fixed view count must be >= 0");
  if (fixed_views == 0 && max_views < 2) fail("dynamic view policy needs max views >= 2");
}

float lr_at(int step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_at needs step >= 0");
  if (cfg.warmup_steps == 0) return cfg.base_lr;
  return cfg.base_lr * std::min(1.f, static_cast<float>(step) / cfg.warmup_steps);
}

void adagrad_step(std::map<std::string, Tensor>& params,
                  const std::map<std::string, std::vector<float>>& grads, OptimizerState& state,
                  float lr, float eps) {
  for (auto& [name, w] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const auto& g = git->second;
    if (g.size() != w.data.size())
      throw std::invalid_argument("adagrad gradient size mismatch for " + name);
    Tensor& G = state.accum[name];
    if (G.data.empty()) G = Tensor(w.shape);
    for (size_t i = 0; i < g.size(); ++i) {
      G.data[i] += g[i] * g[i];
      w.data[i] -= lr * g[i] / (std::sqrt(G.data[i]) + eps);
    }
  }
  ++state.step;
}

std::vector<int> sample_views(int pool, int count, std::mt19937& rng) {
  if (count < 1 || count > pool)
    throw std::invalid_argument("cannot sample " + std::to_string(count) + " views from a pool of " +
                                std::to_string(pool));
  std::vector<int> idx(pool);
  std::iota(idx.begin(), idx.end(), 0);
  // partial Fisher-Yates
  for (int i = 0; i < count; ++i) {
    const int j = i + std::uniform_int_distribution<int>(0, pool - 1 - i)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

void save_training_checkpoint(const std::string& path, const Model& model,
                              const OptimizerState& state) {
  std::map<std::string, Tensor> tensors = model.params();
  for (const auto& [name, G] : state.accum) tensors["opt.G." + name] = G;
  tensors["opt.step"] = Tensor::scalar(static_cast<float>(state.step));
  save_lgfc(path, model.config(), tensors);
}

std::pair<Model, OptimizerState> load_training_checkpoint(const std::string& path) {
  auto [cfg, tensors] = load_lgfc(path);
  OptimizerState state;
  if (auto it = tensors.find("opt.step"); it != tensors.end())
    state.step = static_cast<int>(std::lround(it->second.data[0]));
  for (const auto& [name, t] : tensors)
    if (name.rfind("opt.G.", 0) == 0) state.accum[name.substr(6)] = t;
  return {Model(cfg, std::move(tensors)), std::move(state)};
}

TrainResult train(Model& model, const DatasetManifest& dataset, const TrainConfig& cfg,
                  OptimizerState* state, int start_step) {
  cfg.validate();
  if (model.config().grid_side != dataset.grid_side)
    throw std::invalid_argument("model grid side " + std::to_string(model.config().grid_side) +
                                " does not match dataset " + std::to_string(dataset.grid_side));
  std::vector<LoadedObject> objects = load_split(dataset, "train");
  if (objects.empty()) objects = load_split(dataset, "");
  if (objects.empty()) throw std::invalid_argument("dataset has no objects");

  OptimizerState local;
  if (!state) state = &local;

  TrainResult res;
  std::ofstream csv;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    const auto mode = start_step > 0 ? std::ios::app : std::ios::trunc;
    csv.open((fs::path(cfg.out_dir) / "loss.csv").string(), mode);
    if (!csv) throw std::runtime_error("cannot open loss log under " + cfg.out_dir);
    if (start_step == 0) csv << "step,lr,loss,views\n";
  }

  // parameter-pointer -> name map for gradient aggregation
  std::map<const Tensor*, std::string> names;
  for (const auto& [name, t] : model.params()) names[&t] = name;

  const bool naive = model.config().scheme == Scheme::Naive;
  const int max_fixed = cfg.fixed_views;
  for (int step = start_step + 1; step <= cfg.total_steps; ++step) {
    std::mt19937 rng(step_seed(cfg.seed, static_cast<uint32_t>(step)));
    const float lr = lr_at(step, cfg);

    int view_count = max_fixed;
    if (view_count == 0)
      view_count = std::uniform_int_distribution<int>(1, cfg.max_views - 1)(rng);
    if (model.config().variant == Variant::SingleView) view_count = 1;

    Tape tape;
    std::vector<Tensor> losses;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const LoadedObject& obj =
          objects[std::uniform_int_distribution<size_t>(0, objects.size() - 1)(rng)];
      const auto pick = sample_views(static_cast<int>(obj.views.size()), view_count, rng);
      std::vector<Tensor> views;
      for (int i : pick) views.push_back(obj.views[i]);
      ForwardOptions opts;
      if (naive) opts.teacher = &obj.target;
      ForwardResult fr = model.forward(tape, views, opts);
      Tensor target(fr.pred.shape, obj.target.values);
      Tensor diff = tape.add(fr.pred, tape.scale(target, -1.f));
      losses.push_back(tape.mean(tape.mul(diff, diff)));
    }
    Tensor loss = losses.size() == 1 ? losses[0] : tape.mean(tape.concat(losses, 0));
    const float loss_v = loss.item();
    if (!std::isfinite(loss_v))
      throw NumericalError(step, lr,
                           "non-finite loss at step " + std::to_string(step) + " (lr " +
                               std::to_string(lr) + ")");

    tape.backward(loss);
    std::map<std::string, std::vector<float>> grads;
    for (const auto& w : tape.watched()) {
      auto nit = names.find(w.param);
      if (nit == names.end()) continue;
      const auto g = tape.grad_node(w.node);
      auto& acc = grads[nit->second];
      if (acc.empty())
        acc = g;
      else
        for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }

    if (cfg.optimizer == "adagrad") {
      adagrad_step(model.params(), grads, *state, lr, cfg.adagrad_eps);
    } else {
      for (auto& [name, w] : model.params()) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        for (size_t i = 0; i < w.data.size(); ++i) w.data[i] -= lr * git->second[i];
      }
      ++state->step;
    }

    res.log.push_back(LogRow{step, lr, loss_v, view_count});
    if (csv.is_open()) {
      csv << step << "," << lr << "," << loss_v << "," << view_count << "\n";
      csv.flush();
    }

    if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0) {
      double acc = 0;
      for (const auto& obj : objects) {
        Tape etape;
        ForwardResult fr = model.forward(etape, obj.views);
        acc += quick_iou(fr.grid, obj.target, 0.3f);
      }
      res.eval_points.push_back(
          EvalPoint{step, static_cast<float>(acc / objects.size())});
    }

    if (!cfg.out_dir.empty() && cfg.checkpoint_interval > 0 &&
        step % cfg.checkpoint_interval == 0 && step != cfg.total_steps) {
      save_training_checkpoint(
          (fs::path(cfg.out_dir) / ("step-" + std::to_string(step) + ".lgfc")).string(), model,
          *state);
    }
  }

  if (!cfg.out_dir.empty()) {
    res.final_checkpoint =
        (fs::path(cfg.out_dir) / ("step-" + std::to_string(cfg.total_steps) + ".lgfc")).string();
    save_training_checkpoint(res.final_checkpoint, model, *state);
  }
  return res;
}

}  // namespace lego
