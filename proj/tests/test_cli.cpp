// End-to-end tests that spawn the command-line binary (path injected via the
// LEGO_CLI_PATH compile definition) and check its outputs and exit codes.
#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lego/metrics.hpp"
#include "lego/synth.hpp"

using namespace lego;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "lego_cli_tests";

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = kRoot / ("cli-log-" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(LEGO_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(log);
  r.output.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// shared fixture: one tiny dataset and one short training run
const fs::path kData = kRoot / "data";
const fs::path kRun = kRoot / "run";

void ensure_fixture() {
  static bool done = false;
  if (done) return;
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  RunResult gen = run_cli("--seed 7 --out " + kData.string() +
                          " generate-data --objects 10 --grid 8 --image 16 --views 4");
  REQUIRE(gen.exit_code == 0);
  RunResult tr = run_cli("--seed 3 --out " + kRun.string() + " train --data " + kData.string() +
                         " --steps 30 --warmup 10 --batch 2 --train-views 2 --queries 2"
                         " --d-model 16 --ff-dim 32 --layers 1 --heads 4 --conv-units 1"
                         " --checkpoint-interval 0");
  REQUIRE(tr.exit_code == 0);
  done = true;
}

std::string first_view_path() {
  DatasetManifest m = load_manifest((kData / "manifest.json").string());
  return (kData / m.objects[0].views[0].path).string();
}

}  // namespace

TEST_CASE("generate-data: count echo, reproducibility, validation") {
  ensure_fixture();
  DatasetManifest m = load_manifest((kData / "manifest.json").string());
  CHECK(m.objects.size() == 10);
  CHECK(m.grid_side == 8);

  const fs::path again = kRoot / "data2";
  RunResult r = run_cli("--seed 7 --out " + again.string() +
                        " generate-data --objects 10 --grid 8 --image 16 --views 4");
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(again / "manifest.json") == slurp(kData / "manifest.json"));

  RunResult bad = run_cli("--out " + (kRoot / "x1").string() + " generate-data --objects 0");
  CHECK(bad.exit_code == 2);
  CHECK(bad.output.find("object") != std::string::npos);
}

TEST_CASE("train: loss log with warmup ramp, effective config echoed first") {
  ensure_fixture();
  std::ifstream csv(kRun / "loss.csv");
  REQUIRE(csv.good());
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,lr,loss,views");
  float prev_lr = -1.f;
  int rows = 0;
  for (std::string line; std::getline(csv, line); ++rows) {
    std::stringstream ss(line);
    int step, views;
    float lr, loss;
    char c;
    ss >> step >> c >> lr >> c >> loss >> c >> views;
    CHECK(step == rows + 1);
    CHECK(views == 2);
    if (step <= 10) {  // strictly increasing through the warmup
      CHECK(lr > prev_lr);
      prev_lr = lr;
    } else {
      CHECK(lr == prev_lr);
    }
  }
  CHECK(rows == 30);
  CHECK(fs::exists(kRun / "step-30.lgfc"));

  // config echo lands in the output directory
  const std::string echoed = slurp(kRun / "effective-config.txt");
  CHECK(echoed.find("model.d_model=16") != std::string::npos);
  CHECK(echoed.find("train.total_steps=30") != std::string::npos);

  // single-view variant rejects multi-view training
  RunResult bad = run_cli("--out " + (kRoot / "x2").string() + " train --data " + kData.string() +
                          " --variant s --train-views 2 --steps 5");
  CHECK(bad.exit_code == 2);
  CHECK(bad.output.find("single-view") != std::string::npos);
}

TEST_CASE("train: flag overrides beat config file values") {
  ensure_fixture();
  const fs::path cfg_file = kRoot / "train.cfg";
  {
    std::ofstream f(cfg_file);
    f << "# training configuration\n"
      << "model.d_model = 16\n"
      << "model.ff_dim = 32\n"
      << "model.n_layers = 1\n"
      << "model.n_queries = 4\n"
      << "model.conv_units = 1\n"
      << "train.total_steps = 5\n"
      << "train.warmup_steps = 2\n"
      << "train.batch_size = 1\n"
      << "train.fixed_views = 1\n";
  }
  const fs::path out = kRoot / "cfgrun";
  RunResult r = run_cli("--config " + cfg_file.string() + " --seed 3 --out " + out.string() +
                        " train --data " + kData.string() + " --queries 2");
  REQUIRE(r.exit_code == 0);
  const std::string echoed = slurp(out / "effective-config.txt");
  CHECK(echoed.find("model.n_queries=2") != std::string::npos);  // flag wins
  CHECK(echoed.find("train.total_steps=5") != std::string::npos);  // file wins over default
  auto [mc, tensors] = load_lgfc((out / "step-5.lgfc").string());
  CHECK(mc.n_queries == 2);
  CHECK(mc.d_model == 16);
}

TEST_CASE("eval: entry count and byte-identical reruns") {
  ensure_fixture();
  const fs::path a = kRoot / "eval_a", b = kRoot / "eval_b";
  const std::string base = " eval --checkpoint " + (kRun / "step-30.lgfc").string() + " --data " +
                           kData.string() + " --views 1,2,4";
  RunResult r1 = run_cli("--out " + a.string() + base);
  REQUIRE(r1.exit_code == 0);
  CHECK(r1.output.find("views=1") != std::string::npos);
  CHECK(r1.output.find("views=4") != std::string::npos);

  const std::string body = slurp(a / "report.json");
  CHECK(std::count(body.begin(), body.end(), '{') > 0);
  size_t entries = 0, pos = 0;
  while ((pos = body.find("\"views\"", pos)) != std::string::npos) {
    ++entries;
    pos += 7;
  }
  CHECK(entries == 3);

  RunResult r2 = run_cli("--out " + b.string() + base);
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(a / "report.json") == slurp(b / "report.json"));

  RunResult missing = run_cli("--out " + (kRoot / "x3").string() +
                              " eval --checkpoint nonexistent.lgfc --data " + kData.string());
  CHECK(missing.exit_code == 3);
}

TEST_CASE("reconstruct: voxel output, parts identity, attention rows") {
  ensure_fixture();
  const fs::path out = kRoot / "rec";
  RunResult r = run_cli("--out " + out.string() + " reconstruct --checkpoint " +
                        (kRun / "step-30.lgfc").string() + " --image " + first_view_path() +
                        " --parts --attention");
  REQUIRE(r.exit_code == 0);

  OccupancyGrid main_grid = load_voxg((out / "reconstruction.voxg").string());
  CHECK(main_grid.side == 8);
  CHECK(main_grid.is_binary());

  // clipped sum of the unclipped parts, thresholded, equals the main output
  OccupancyGrid sum(8, 0.f);
  int part_count = 0;
  for (; fs::exists(out / ("part-" + std::to_string(part_count) + ".voxg")); ++part_count) {
    OccupancyGrid part =
        load_voxg((out / ("part-" + std::to_string(part_count) + ".voxg")).string());
    for (size_t i = 0; i < sum.values.size(); ++i)
      sum.values[i] = std::min(1.f, sum.values[i] + part.values[i]);
  }
  CHECK(part_count == 2);  // trained with --queries 2
  OccupancyGrid recombined = threshold(sum, 0.3f);
  CHECK(recombined.values == main_grid.values);

  std::vector<AttentionRecord> records = import_attention((out / "attention.json").string());
  REQUIRE(!records.empty());
  for (const auto& rec : records)
    for (int i = 0; i < rec.rows; ++i) {
      double row = 0;
      for (int j = 0; j < rec.cols; ++j) row += rec.scores[i * rec.cols + j];
      CHECK(row == doctest::Approx(1.0).epsilon(1e-5));
    }

  RunResult bad = run_cli("--out " + (kRoot / "x4").string() + " reconstruct --checkpoint " +
                          (kRun / "step-30.lgfc").string() + " --image no-such-image.pgm");
  CHECK(bad.exit_code == 3);
  CHECK(bad.output.find("no-such-image.pgm") != std::string::npos);
}

TEST_CASE("decompose: exact box fit, determinism, validation") {
  ensure_fixture();
  // a single box is exactly rank-1
  OccupancyGrid box(8);
  for (int z = 2; z < 6; ++z)
    for (int y = 1; y < 4; ++y)
      for (int x = 3; x < 7; ++x) box.at(z, y, x) = 1.f;
  const fs::path box_path = kRoot / "box.voxg";
  save_voxg(box_path.string(), box, true);

  const fs::path out = kRoot / "dec";
  RunResult r = run_cli("--seed 1 --out " + out.string() + " decompose --input " +
                        box_path.string() + " -k 1");
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("achieved_iou=1") != std::string::npos);
  OccupancyGrid recon = load_voxg((out / "decomposition.voxg").string());
  CHECK(recon.values == box.values);

  RunResult again = run_cli("--seed 1 --out " + (kRoot / "dec2").string() + " decompose --input " +
                            box_path.string() + " -k 1");
  REQUIRE(again.exit_code == 0);
  CHECK(slurp(out / "factors.json") == slurp(kRoot / "dec2" / "factors.json"));

  RunResult bad = run_cli("--out " + (kRoot / "x5").string() + " decompose --input " +
                          box_path.string() + " -k 0");
  CHECK(bad.exit_code == 2);
}

TEST_CASE("dump-attention: export is importable") {
  ensure_fixture();
  const fs::path out = kRoot / "da";
  RunResult r = run_cli("--out " + out.string() + " dump-attention --checkpoint " +
                        (kRun / "step-30.lgfc").string() + " --image " + first_view_path());
  REQUIRE(r.exit_code == 0);
  std::vector<AttentionRecord> records = import_attention((out / "attention.json").string());
  CHECK(!records.empty());
}

TEST_CASE("unknown flags and missing subcommand exit with a config error") {
  RunResult r = run_cli("--no-such-flag");
  CHECK(r.exit_code == 2);
  RunResult none = run_cli("");
  CHECK(none.exit_code == 2);
}
