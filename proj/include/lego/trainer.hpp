#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lego/model.hpp"
#include "lego/synth.hpp"

namespace lego {

/// Training diverged (non-finite loss); carries the failing step and lr.
struct NumericalError : std::runtime_error {
  NumericalError(int step_, float lr_, const std::string& what)
      : std::runtime_error(what), step(step_), lr(lr_) {}
  int step;
  float lr;
};

struct TrainConfig {
  int batch_size = 8;
  int total_steps = 2000;
  float base_lr = 0.01f;
  int warmup_steps = 200;
  std::string optimizer = "adagrad";  // adagrad | sgd
  float adagrad_eps = 1e-10f;
  // view policy: fixed_views > 0 uses that count; 0 draws uniformly from
  // [1, max_views) each step
  int fixed_views = 4;
  int max_views = 8;
  uint32_t seed = 0;
  int checkpoint_interval = 500;  // 0 = only the final checkpoint
  int eval_interval = 0;          // 0 = off; train-set IoU probes
  std::string out_dir;            // empty = no files written

  void validate() const;
};

/// Linear warmup to base_lr, constant afterwards.
float lr_at(int step, const TrainConfig& cfg);

struct OptimizerState {
  std::map<std::string, Tensor> accum;  // Adagrad G, one per parameter
  int step = 0;
};

/// G += g^2; w -= lr * g / (sqrt(G) + eps), elementwise.
void adagrad_step(std::map<std::string, Tensor>& params,
                  const std::map<std::string, std::vector<float>>& grads, OptimizerState& state,
                  float lr, float eps);

/// Uniform sample of `count` distinct indices from [0, pool).
std::vector<int> sample_views(int pool, int count, std::mt19937& rng);

struct LogRow {
  int step = 0;
  float lr = 0.f;
  float loss = 0.f;
  int views = 0;
};

struct EvalPoint {
  int step = 0;
  float mean_iou = 0.f;
};

struct TrainResult {
  std::vector<LogRow> log;
  std::vector<EvalPoint> eval_points;
  std::string final_checkpoint;  // empty when out_dir unset
};

// Training checkpoints are model checkpoints with the optimizer state stored
// alongside as "opt.G.<param>" tensors plus an "opt.step" scalar.
void save_training_checkpoint(const std::string& path, const Model& model,
                              const OptimizerState& state);
std::pair<Model, OptimizerState> load_training_checkpoint(const std::string& path);

/// Runs steps start_step+1 .. total_steps. Deterministic given seed: every
/// step draws from a counter-derived RNG, so resumed runs replay exactly.
/// Writes "loss.csv" and "step-{n}.lgfc" files under out_dir when set.
TrainResult train(Model& model, const DatasetManifest& dataset, const TrainConfig& cfg,
                  OptimizerState* state = nullptr, int start_step = 0);

}  // namespace lego
