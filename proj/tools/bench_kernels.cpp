// Benchmarks the OpenMP kernels against their serial reference
// implementations and verifies that both produce identical results.
//
// Usage: bench_kernels [repeats]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#include "lego/kernels.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<float> random_vec(size_t n, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

bool equal(const std::vector<float>& a, const std::vector<float>& b) { return a == b; }

struct Row {
  std::string name;
  double serial_s, parallel_s;
  bool match;
};

void print(const Row& r) {
  std::printf("%-28s serial %8.4fs  parallel %8.4fs  speedup %5.2fx  %s\n", r.name.c_str(),
              r.serial_s, r.parallel_s, r.serial_s / r.parallel_s,
              r.match ? "results identical" : "RESULTS DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 20;
  std::printf("threads: %d, repeats per kernel: %d\n", omp_get_max_threads(), repeats);
  std::mt19937 rng(12345);
  bool all_match = true;

  {  // matmul, transformer-sized
    const int m = 256, k = 256, n = 256;
    auto a = random_vec((size_t)m * k, rng), b = random_vec((size_t)k * n, rng);
    std::vector<float> cs((size_t)m * n), cp((size_t)m * n);
    auto t0 = Clock::now();
    for (int r = 0; r < repeats; ++r)
      lego::kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n);
    const double ts = seconds_since(t0);
    t0 = Clock::now();
    for (int r = 0; r < repeats; ++r)
      lego::kernels::matmul(a.data(), b.data(), cp.data(), m, k, n);
    const double tp = seconds_since(t0);
    Row row{"matmul 256x256x256", ts, tp, equal(cs, cp)};
    print(row);
    all_match &= row.match;
  }

  {  // conv2d, backbone-sized
    const int cin = 32, h = 64, w = 64, cout = 32, kh = 3, kw = 3;
    auto x = random_vec((size_t)cin * h * w, rng);
    auto wt = random_vec((size_t)cout * cin * kh * kw, rng);
    auto bias = random_vec(cout, rng);
    std::vector<float> os((size_t)cout * h * w), op((size_t)cout * h * w);
    auto t0 = Clock::now();
    for (int r = 0; r < repeats; ++r)
      lego::kernels::serial::conv2d(x.data(), wt.data(), bias.data(), os.data(), cin, h, w, cout,
                                    kh, kw, 1, 1);
    const double ts = seconds_since(t0);
    t0 = Clock::now();
    for (int r = 0; r < repeats; ++r)
      lego::kernels::conv2d(x.data(), wt.data(), bias.data(), op.data(), cin, h, w, cout, kh, kw,
                            1, 1);
    const double tp = seconds_since(t0);
    Row row{"conv2d 32x64x64 3x3", ts, tp, equal(os, op)};
    print(row);
    all_match &= row.match;
  }

  {  // rank-1 composition, large grid to exercise the parallel path
    const int n = 64, nf = 12;
    auto zs = random_vec((size_t)nf * n, rng);
    auto ys = random_vec((size_t)nf * n, rng);
    auto xs = random_vec((size_t)nf * n, rng);
    std::vector<float> gs((size_t)n * n * n, 0.f), gp((size_t)n * n * n, 0.f);
    auto t0 = Clock::now();
    for (int r = 0; r < repeats; ++r) {
      std::fill(gs.begin(), gs.end(), 0.f);
      lego::kernels::serial::rank1_accumulate(zs.data(), ys.data(), xs.data(), nf, n, gs.data(),
                                              true);
    }
    const double ts = seconds_since(t0);
    t0 = Clock::now();
    for (int r = 0; r < repeats; ++r) {
      std::fill(gp.begin(), gp.end(), 0.f);
      lego::kernels::rank1_accumulate(zs.data(), ys.data(), xs.data(), nf, n, gp.data(), true);
    }
    const double tp = seconds_since(t0);
    Row row{"rank1 compose 64^3 k=12", ts, tp, equal(gs, gp)};
    print(row);
    all_match &= row.match;
  }

  if (!all_match) {
    std::fprintf(stderr, "parallel kernels diverged from the serial reference\n");
    return 1;
  }
  return 0;
}
