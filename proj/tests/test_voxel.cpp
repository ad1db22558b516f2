#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "lego/voxel.hpp"

using namespace lego;

namespace {

// Brute-force triple-loop sum-then-clip oracle.
OccupancyGrid compose_oracle(const FactorSet& f) {
  OccupancyGrid g(f.side);
  for (int a = 0; a < f.side; ++a)
    for (int b = 0; b < f.side; ++b)
      for (int c = 0; c < f.side; ++c) {
        double s = 0.0;
        for (int i = 0; i < f.count(); ++i)
          s += static_cast<double>(f.z[i][a]) * f.y[i][b] * f.x[i][c];
        g.at(a, b, c) = static_cast<float>(std::min(1.0, s));
      }
  return g;
}

float iou(const OccupancyGrid& a, const OccupancyGrid& b) {
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const bool va = a.values[i] > 0.5f, vb = b.values[i] > 0.5f;
    inter += va && vb;
    uni += va || vb;
  }
  return uni == 0 ? 1.f : static_cast<float>(inter) / static_cast<float>(uni);
}

FactorSet random_factors(int side, int k, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  FactorSet f;
  f.side = side;
  for (int i = 0; i < k; ++i) {
    std::vector<float> z(side), y(side), x(side);
    for (int j = 0; j < side; ++j) {
      z[j] = u(rng);
      y[j] = u(rng);
      x[j] = u(rng);
    }
    f.z.push_back(z);
    f.y.push_back(y);
    f.x.push_back(x);
  }
  return f;
}

OccupancyGrid box_grid(int n, int z0, int z1, int y0, int y1, int x0, int x1) {
  OccupancyGrid g(n);
  for (int z = z0; z < z1; ++z)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) g.at(z, y, x) = 1.f;
  return g;
}

}  // namespace

TEST_CASE("apply_factor_heads: zero weights give 0.5, saturated bias gives 1") {
  const int d = 6, n = 4, k = 3;
  FactorHeads heads{Tensor({d, n}), Tensor({d, n}), Tensor({d, n}),
                    Tensor({n}),    Tensor({n}),    Tensor({n})};
  std::mt19937 rng(1);
  Tensor dec = Tensor::randn({k, d}, rng);
  Tape tape;
  FactorSet f = apply_factor_heads(tape, dec, heads);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) {
      CHECK(f.z[i][j] == 0.5f);
      CHECK(f.y[i][j] == 0.5f);
      CHECK(f.x[i][j] == 0.5f);
    }

  FactorHeads sat = heads;
  sat.bz = Tensor({n}, 20.f);
  FactorSet fs = apply_factor_heads(tape, dec, sat);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) CHECK(fs.z[i][j] > 1.f - 1e-6f);
}

TEST_CASE("apply_factor_heads matches a direct dense computation") {
  const int d = 5, n = 6, k = 2;
  std::mt19937 rng(2);
  FactorHeads heads{Tensor::randn({d, n}, rng), Tensor::randn({d, n}, rng),
                    Tensor::randn({d, n}, rng), Tensor::randn({n}, rng),
                    Tensor::randn({n}, rng),    Tensor::randn({n}, rng)};
  Tensor dec = Tensor::randn({k, d}, rng);
  Tape tape;
  FactorSet f = apply_factor_heads(tape, dec, heads);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = heads.bz.data[j];
      for (int p = 0; p < d; ++p) acc += dec.data[i * d + p] * heads.wz.data[p * n + j];
      const double expect = 1.0 / (1.0 + std::exp(-acc));
      CHECK(f.z[i][j] == doctest::Approx(expect).epsilon(1e-5));
    }
  CHECK_THROWS_AS(apply_factor_heads(tape, Tensor::randn({k, d + 1}, rng), heads),
                  std::invalid_argument);
}

TEST_CASE("compose_factors: indicator box") {
  FactorSet f;
  f.side = 4;
  f.z = {{1, 1, 0, 0}};
  f.y = {{1, 1, 0, 0}};
  f.x = {{1, 1, 0, 0}};
  OccupancyGrid g = compose_factors(f);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        CHECK(g.at(a, b, c) == ((a < 2 && b < 2 && c < 2) ? 1.f : 0.f));
}

TEST_CASE("compose_factors: duplicated binary factor is idempotent (1+1=1)") {
  FactorSet f1;
  f1.side = 4;
  f1.z = {{1, 0, 1, 0}};
  f1.y = {{0, 1, 1, 0}};
  f1.x = {{1, 1, 0, 0}};
  FactorSet f2 = f1;
  f2.z.push_back(f1.z[0]);
  f2.y.push_back(f1.y[0]);
  f2.x.push_back(f1.x[0]);
  CHECK(compose_factors(f1).values == compose_factors(f2).values);
}

TEST_CASE("compose_factors equals triple-loop oracle; invariance and monotonicity") {
  std::mt19937 rng(3);
  for (int it = 0; it < 30; ++it) {
    const int k = 1 + it % 4;
    FactorSet f = random_factors(8, k, rng);
    OccupancyGrid g = compose_factors(f);
    OccupancyGrid ref = compose_oracle(f);
    for (size_t i = 0; i < g.values.size(); ++i) {
      CHECK(g.values[i] == doctest::Approx(ref.values[i]).epsilon(1e-6));
      CHECK(g.values[i] >= 0.f);
      CHECK(g.values[i] <= 1.f);
    }
    // permutation invariance (exact)
    if (k > 1) {
      std::vector<int> order(k);
      for (int i = 0; i < k; ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
      FactorSet p2;
      p2.side = f.side;
      for (int i : order) {
        p2.z.push_back(f.z[i]);
        p2.y.push_back(f.y[i]);
        p2.x.push_back(f.x[i]);
      }
      CHECK(compose_factors(p2).values == g.values);
    }
    // appending a factor never decreases any voxel
    FactorSet ext = f;
    FactorSet extra = random_factors(8, 1, rng);
    ext.z.push_back(extra.z[0]);
    ext.y.push_back(extra.y[0]);
    ext.x.push_back(extra.x[0]);
    OccupancyGrid ge = compose_factors(ext);
    for (size_t i = 0; i < g.values.size(); ++i) CHECK(ge.values[i] >= g.values[i]);
  }
}

TEST_CASE("compose_factors rejects out-of-range factors") {
  FactorSet f;
  f.side = 2;
  f.z = {{1.5f, 0}};
  f.y = {{1, 0}};
  f.x = {{1, 0}};
  CHECK_THROWS_AS(compose_factors(f), std::invalid_argument);
}

TEST_CASE("boolean semantics: binary factors compose-then-threshold equals voxelwise OR") {
  std::mt19937 rng(4);
  std::bernoulli_distribution coin(0.4);
  for (int it = 0; it < 10; ++it) {
    const int k = 2 + it % 3;
    FactorSet f;
    f.side = 6;
    for (int i = 0; i < k; ++i) {
      std::vector<float> z(6), y(6), x(6);
      for (int j = 0; j < 6; ++j) {
        z[j] = coin(rng);
        y[j] = coin(rng);
        x[j] = coin(rng);
      }
      f.z.push_back(z);
      f.y.push_back(y);
      f.x.push_back(x);
    }
    OccupancyGrid composed = threshold(compose_factors(f), 0.5f);
    OccupancyGrid orred(6);
    for (int i = 0; i < k; ++i) {
      OccupancyGrid r = rank1_grid(f.z[i], f.y[i], f.x[i]);
      for (size_t j = 0; j < orred.values.size(); ++j)
        orred.values[j] = std::max(orred.values[j], r.values[j]);
    }
    CHECK(composed.values == orred.values);
  }
}

TEST_CASE("mse_loss examples and oracle") {
  OccupancyGrid g = box_grid(4, 0, 2, 0, 3, 1, 4);
  CHECK(mse_loss(g, g) == 0.f);

  OccupancyGrid zeros(4, 0.f), ones(4, 1.f);
  CHECK(mse_loss(zeros, ones) == 1.f);

  std::mt19937 rng(5);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  OccupancyGrid a(4), b(4);
  for (size_t i = 0; i < a.values.size(); ++i) {
    a.values[i] = u(rng);
    b.values[i] = u(rng);
  }
  double acc = 0;
  for (size_t i = 0; i < a.values.size(); ++i)
    acc += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  CHECK(mse_loss(a, b) == doctest::Approx(acc / 64.0).epsilon(1e-6));
  CHECK(mse_loss(a, b) > 0.f);
  CHECK_THROWS_AS(mse_loss(a, OccupancyGrid(5)), std::invalid_argument);
}

TEST_CASE("threshold examples") {
  OccupancyGrid bin = box_grid(4, 0, 2, 0, 2, 0, 2);
  CHECK(threshold(bin, 0.7f).values == bin.values);
  CHECK(threshold(bin, 0.1f).values == bin.values);

  OccupancyGrid uniform(4, 0.3f);
  OccupancyGrid th = threshold(uniform, 0.3f);
  for (float v : th.values) CHECK(v == 1.f);  // inclusive >= at the boundary

  std::mt19937 rng(6);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  OccupancyGrid r(4);
  for (auto& v : r.values) v = u(rng);
  OccupancyGrid tr = threshold(r, 0.3f);
  for (size_t i = 0; i < r.values.size(); ++i)
    CHECK(tr.values[i] == (r.values[i] >= 0.3f ? 1.f : 0.f));

  CHECK_THROWS_AS(threshold(r, 0.f), std::invalid_argument);
  CHECK_THROWS_AS(threshold(r, 1.f), std::invalid_argument);
}

TEST_CASE("cp_fit_oracle: single box is exactly rank-1") {
  OccupancyGrid g = box_grid(8, 1, 5, 2, 7, 0, 4);
  FactorSet f = cp_fit_oracle(g, 1, 42);
  OccupancyGrid rec = threshold(compose_factors(f), 0.3f);
  CHECK(iou(rec, g) == 1.f);
}

TEST_CASE("cp_fit_oracle: L-shape is boolean rank-2") {
  OccupancyGrid g = box_grid(8, 0, 2, 0, 6, 0, 6);
  OccupancyGrid g2 = box_grid(8, 0, 6, 0, 2, 0, 6);
  for (size_t i = 0; i < g.values.size(); ++i) g.values[i] = std::max(g.values[i], g2.values[i]);
  FactorSet f = cp_fit_oracle(g, 2, 7);
  OccupancyGrid rec = threshold(compose_factors(f), 0.3f);
  CHECK(iou(rec, g) == 1.f);
}

TEST_CASE("cp_fit_oracle: random 3-box union reaches IoU >= 0.95 and is deterministic") {
  std::mt19937 rng(123);
  std::uniform_int_distribution<int> lo(0, 4), len(2, 4);
  OccupancyGrid g(8);
  for (int b = 0; b < 3; ++b) {
    const int z0 = lo(rng), y0 = lo(rng), x0 = lo(rng);
    const int z1 = std::min(8, z0 + len(rng)), y1 = std::min(8, y0 + len(rng)),
              x1 = std::min(8, x0 + len(rng));
    OccupancyGrid box = box_grid(8, z0, z1, y0, y1, x0, x1);
    for (size_t i = 0; i < g.values.size(); ++i)
      g.values[i] = std::max(g.values[i], box.values[i]);
  }
  FactorSet f = cp_fit_oracle(g, 3, 99);
  OccupancyGrid rec = threshold(compose_factors(f), 0.3f);
  CHECK(iou(rec, g) >= 0.95f);

  FactorSet f2 = cp_fit_oracle(g, 3, 99);
  CHECK(f.z == f2.z);
  CHECK(f.y == f2.y);
  CHECK(f.x == f2.x);
  CHECK_THROWS_AS(cp_fit_oracle(g, 0, 1), std::invalid_argument);
}

TEST_CASE("voxel file round trip, both payload kinds") {
  OccupancyGrid g = box_grid(6, 1, 4, 0, 6, 2, 5);
  const char* path = "test_roundtrip.voxg";
  save_voxg(path, g, true);
  OccupancyGrid r = load_voxg(path);
  CHECK(r.side == 6);
  CHECK(r.values == g.values);

  std::mt19937 rng(8);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  OccupancyGrid real(5);
  for (auto& v : real.values) v = u(rng);
  save_voxg(path, real, false);
  OccupancyGrid r2 = load_voxg(path);
  CHECK(r2.values == real.values);
  std::remove(path);

  CHECK_THROWS_AS(load_voxg("does_not_exist.voxg"), std::runtime_error);
}
