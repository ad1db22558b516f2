#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <random>
#include <stdexcept>

#include "lego/trainer.hpp"

using namespace lego;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

DatasetManifest tiny_dataset(const fs::path& dir, int objects = 1) {
  DatasetConfig cfg;
  cfg.counts = {{"slab", objects}};
  cfg.grid_side = 8;
  cfg.image_side = 16;
  cfg.view_angles = {{0.f, 20.f}, {90.f, 20.f}, {180.f, 20.f}, {270.f, 20.f}};
  cfg.seed = 3;
  cfg.split_fraction = 0.5f;  // with 1 object: 0 train entries -> all used
  cfg.out_dir = dir.string();
  return build_dataset(cfg);
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.grid_side = 8;
  cfg.image_side = 16;
  cfg.d_model = 16;
  cfg.ff_dim = 32;
  cfg.n_layers = 1;
  cfg.n_heads = 4;
  cfg.n_queries = 2;
  cfg.conv_units = 1;
  return cfg;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.total_steps = 300;
  cfg.base_lr = 0.05f;
  cfg.warmup_steps = 30;
  cfg.fixed_views = 2;
  cfg.seed = 5;
  cfg.checkpoint_interval = 0;
  return cfg;
}

}  // namespace

TEST_CASE("lr_at: ramp endpoints, linearity, monotone and bounded") {
  TrainConfig cfg;
  cfg.base_lr = 0.01f;
  cfg.warmup_steps = 200;
  cfg.total_steps = 400;
  CHECK(lr_at(0, cfg) == 0.f);
  CHECK(lr_at(200, cfg) == 0.01f);
  CHECK(lr_at(100, cfg) == doctest::Approx(0.005f));
  float prev = -1.f;
  for (int s = 0; s <= 400; s += 7) {
    const float lr = lr_at(s, cfg);
    CHECK(lr >= prev);
    CHECK(lr <= cfg.base_lr);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_at(-1, cfg), std::invalid_argument);
  TrainConfig no_warm = cfg;
  no_warm.warmup_steps = 0;
  CHECK(lr_at(0, no_warm) == 0.01f);
}

TEST_CASE("adagrad_step: hand-computed examples") {
  std::map<std::string, Tensor> params{{"w", Tensor::scalar(1.f)}};
  std::map<std::string, std::vector<float>> grads{{"w", {2.f}}};
  OptimizerState state;
  adagrad_step(params, grads, state, 0.1f, 0.f);
  CHECK(state.accum.at("w").data[0] == 4.f);
  CHECK(params.at("w").data[0] == doctest::Approx(0.9f));
  CHECK(state.step == 1);

  grads["w"][0] = 0.f;
  adagrad_step(params, grads, state, 0.1f, 0.f);
  CHECK(state.accum.at("w").data[0] == 4.f);
  CHECK(params.at("w").data[0] == doctest::Approx(0.9f));

  // two fresh successive steps vs a hand-rolled recurrence
  std::map<std::string, Tensor> p2{{"w", Tensor::scalar(0.5f)}};
  OptimizerState s2;
  const float g1 = 0.3f, g2 = -0.7f, lr = 0.2f, eps = 1e-10f;
  adagrad_step(p2, {{"w", {g1}}}, s2, lr, eps);
  adagrad_step(p2, {{"w", {g2}}}, s2, lr, eps);
  double G = 0, w = 0.5;
  G += g1 * g1;
  w -= lr * g1 / (std::sqrt(G) + eps);
  G += (double)g2 * g2;
  w -= lr * g2 / (std::sqrt(G) + eps);
  CHECK(p2.at("w").data[0] == doctest::Approx(w).epsilon(1e-6));
  CHECK(s2.accum.at("w").data[0] == doctest::Approx(G).epsilon(1e-6));

  CHECK_THROWS_AS(adagrad_step(p2, {{"w", {1.f, 2.f}}}, s2, lr, eps), std::invalid_argument);
}

TEST_CASE("sample_views: exhaustive, deterministic, roughly uniform") {
  std::mt19937 rng(1);
  auto all = sample_views(5, 5, rng);
  std::vector<int> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4});

  std::mt19937 a(9), b(9);
  for (int i = 0; i < 20; ++i) CHECK(sample_views(8, 3, a) == sample_views(8, 3, b));

  std::mt19937 freq_rng(7);
  std::vector<int> hits(8, 0);
  for (int i = 0; i < 1000; ++i) ++hits[sample_views(8, 1, freq_rng)[0]];
  for (int h : hits) {
    CHECK(h >= 80);   // 0.08
    CHECK(h <= 170);  // 0.17
  }

  CHECK_THROWS_AS(sample_views(4, 5, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_views(4, 0, rng), std::invalid_argument);
}

TEST_CASE("train config validation") {
  TrainConfig cfg = tiny_train_config();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_train_config();
  cfg.warmup_steps = cfg.total_steps + 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_train_config();
  cfg.optimizer = "adam";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("train: overfits one object and logs finite losses") {
  TempDir data("lego_train_data");
  DatasetManifest m = tiny_dataset(data.path);
  Model model(tiny_model_config(), 7);
  TrainConfig cfg = tiny_train_config();

  TrainResult res = train(model, m, cfg);
  REQUIRE(res.log.size() == 300);
  for (const auto& row : res.log) CHECK(std::isfinite(row.loss));
  CHECK(res.log.front().views == 2);
  const float initial = res.log.front().loss;
  const float final_loss = res.log.back().loss;
  INFO("initial=" << initial << " final=" << final_loss);
  CHECK(final_loss < 0.05f * initial);
}

TEST_CASE("train: zero steps leaves the checkpoint at initialization") {
  TempDir data("lego_train_zero"), out("lego_train_zero_out");
  DatasetManifest m = tiny_dataset(data.path);
  Model model(tiny_model_config(), 11);
  const auto before = model.params();
  TrainConfig cfg = tiny_train_config();
  cfg.total_steps = 0;
  cfg.warmup_steps = 0;
  cfg.out_dir = out.path.string();
  TrainResult res = train(model, m, cfg);
  CHECK(res.log.empty());
  auto [restored, state] = load_training_checkpoint(res.final_checkpoint);
  CHECK(state.step == 0);
  for (const auto& [name, t] : before) CHECK(restored.params().at(name).data == t.data);
}

TEST_CASE("train: adagrad accumulators never decrease") {
  TempDir data("lego_train_acc");
  DatasetManifest m = tiny_dataset(data.path);
  Model model(tiny_model_config(), 13);
  TrainConfig cfg = tiny_train_config();
  cfg.total_steps = 10;
  cfg.warmup_steps = 5;
  OptimizerState state;
  std::map<std::string, Tensor> snapshot;
  for (int chunk = 0; chunk < 2; ++chunk) {
    train(model, m, cfg, &state, chunk * 5);
    for (const auto& [name, G] : state.accum) {
      for (float v : G.data) CHECK(v >= 0.f);
      if (snapshot.count(name))
        for (size_t i = 0; i < G.data.size(); ++i) CHECK(G.data[i] >= snapshot[name].data[i]);
    }
    snapshot = state.accum;
    cfg.total_steps = 10;
  }
}

TEST_CASE("train: resume from a checkpoint replays the loss log") {
  TempDir data("lego_train_resume"), out_a("lego_resume_a"), out_b("lego_resume_b");
  DatasetManifest m = tiny_dataset(data.path, 2);

  TrainConfig cfg = tiny_train_config();
  cfg.total_steps = 60;
  cfg.warmup_steps = 20;
  cfg.checkpoint_interval = 30;

  // uninterrupted run
  Model straight(tiny_model_config(), 21);
  cfg.out_dir = out_a.path.string();
  TrainResult full = train(straight, m, cfg);
  REQUIRE(full.log.size() == 60);

  // interrupted at 30, then resumed
  Model part(tiny_model_config(), 21);
  cfg.out_dir = out_b.path.string();
  cfg.total_steps = 30;
  cfg.checkpoint_interval = 0;
  OptimizerState state;
  train(part, m, cfg, &state);
  auto [resumed, rstate] =
      load_training_checkpoint((out_b.path / "step-30.lgfc").string());
  CHECK(rstate.step == 30);
  cfg.total_steps = 60;
  TrainResult tail = train(resumed, m, cfg, &rstate, 30);
  REQUIRE(tail.log.size() == 30);
  for (size_t i = 0; i < tail.log.size(); ++i) {
    CHECK(tail.log[i].step == full.log[30 + i].step);
    CHECK(tail.log[i].views == full.log[30 + i].views);
    CHECK(tail.log[i].loss == doctest::Approx(full.log[30 + i].loss).epsilon(1e-5));
  }

  // loss.csv format
  std::ifstream csv((out_a.path / "loss.csv").string());
  REQUIRE(csv.good());
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,lr,loss,views");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 60);
}

TEST_CASE("train: checkpoint round trip reproduces forward outputs bit-exactly") {
  TempDir data("lego_train_rt"), out("lego_train_rt_out");
  DatasetManifest m = tiny_dataset(data.path);
  Model model(tiny_model_config(), 31);
  TrainConfig cfg = tiny_train_config();
  cfg.total_steps = 20;
  cfg.warmup_steps = 10;
  cfg.out_dir = out.path.string();
  TrainResult res = train(model, m, cfg);
  auto [restored, state] = load_training_checkpoint(res.final_checkpoint);

  std::mt19937 rng(1);
  std::vector<Tensor> views{Tensor::uniform({1, 16, 16}, rng, 0.f, 1.f),
                            Tensor::uniform({1, 16, 16}, rng, 0.f, 1.f)};
  Tape t1, t2;
  CHECK(restored.forward(t1, views).pred.data == model.forward(t2, views).pred.data);
}

TEST_CASE("train: a non-finite loss raises a numerical abort with step and lr") {
  TempDir data("lego_train_nan");
  DatasetManifest m = tiny_dataset(data.path);
  ModelConfig mc = tiny_model_config();
  mc.scheme = Scheme::Naive;  // direct patch outputs let NaNs reach the loss
  Model model(mc, 41);
  for (auto& [name, t] : model.params()) t.data[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg = tiny_train_config();
  cfg.total_steps = 50;
  cfg.warmup_steps = 0;
  bool aborted = false;
  try {
    train(model, m, cfg);
  } catch (const NumericalError& e) {
    aborted = true;
    CHECK(e.step == 1);
    CHECK(e.lr == lr_at(1, cfg));
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
  CHECK(aborted);
}
